"""Binary and text file formats. All binaries are little-endian; writes are atomic."""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import TimeGrid
from .decode import DepthMap
from .dtof import ReconstructedTransient
from .freqnet import ModelParams
from .itof import MeasurementTensor
from .transient import TransientImage

VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write(path, text.encode("utf-8"))


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))

    def header(self, magic: bytes):
        if self.take(4) != magic:
            raise FormatError(f"not a {magic.decode()} file")
        (version,) = self.unpack("H")
        if version != VERSION:
            raise FormatError(f"unsupported {magic.decode()} version {version}")

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"trailing bytes in {self.what} file")


def _le(a, dtype) -> bytes:
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


# --- transient images ("TOFK") ---

def encode_transient(img: TransientImage) -> bytes:
    g = img.grid
    nr, nc = img.shape
    head = b"TOFK" + struct.pack("<HdIdII", VERSION, g.bin_width, g.n_bins, g.fundamental_freq, nr, nc)
    # planes: values, gt depth, gt kind, then the secondary-path depth
    return head + _le(img.values, "f4") + _le(img.gt_depth, "f4") + _le(img.gt_kind, "u1") + _le(img.alt_depth, "f4")


def decode_transient(data: bytes) -> TransientImage:
    r = _Reader(data, "TOFK")
    r.header(b"TOFK")
    bw, nb, f0, nr, nc = r.unpack("dIdII")
    grid = TimeGrid(bw, nb, f0)
    n = nr * nc
    values = r.array("f4", n * nb).reshape(nr, nc, nb)
    gt = r.array("f4", n).reshape(nr, nc)
    kind = r.array("u1", n).reshape(nr, nc)
    alt = r.array("f4", n).reshape(nr, nc)
    r.done()
    return TransientImage(grid, values, gt, kind, alt)


def write_transient(path, img: TransientImage) -> Path:
    return atomic_write(path, encode_transient(img))


def read_transient(path) -> TransientImage:
    return decode_transient(Path(path).read_bytes())


# --- measurement tensors ("TOFB") ---

def encode_measurement(t: MeasurementTensor) -> bytes:
    nr, nc = t.shape
    K = t.freqs.size
    out = [b"TOFB", struct.pack("<HI", VERSION, K), _le(t.freqs, "f8"), struct.pack("<IIq", nr, nc, t.rng_seed)]
    for k in range(K):
        out += [_le(t.b_cos[..., k], "f4"), _le(t.b_sin[..., k], "f4"), _le(t.amplitude[..., k], "f4")]
    out += [_le(t.saturated, "u1"), _le(t.n_frames, "u2")]
    return b"".join(out)


def decode_measurement(data: bytes) -> MeasurementTensor:
    r = _Reader(data, "TOFB")
    r.header(b"TOFB")
    (K,) = r.unpack("I")
    freqs = r.array("f8", K)
    nr, nc, seed = r.unpack("IIq")
    n = nr * nc
    planes = [[r.array("f4", n).reshape(nr, nc) for _ in range(3)] for _ in range(K)]
    sat = r.array("u1", n).reshape(nr, nc)
    frames = r.array("u2", n).reshape(nr, nc)
    r.done()
    bc, bs, amp = (np.stack([p[i] for p in planes], axis=-1) for i in range(3))
    return MeasurementTensor(freqs, bc, bs, amp, sat, frames, seed)


def write_measurement(path, t: MeasurementTensor) -> Path:
    return atomic_write(path, encode_measurement(t))


def read_measurement(path) -> MeasurementTensor:
    return decode_measurement(Path(path).read_bytes())


def measurement_csv(t: MeasurementTensor) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "freq_hz", "b_cos", "b_sin", "amplitude", "saturated", "n_frames"])
    nr, nc = t.shape
    for i in range(nr):
        for j in range(nc):
            for k, f in enumerate(t.freqs):
                w.writerow([i, j, repr(float(f)), repr(float(t.b_cos[i, j, k])), repr(float(t.b_sin[i, j, k])),
                            repr(float(t.amplitude[i, j, k])), int(t.saturated[i, j] >> k & 1),
                            int(t.n_frames[i, j])])
    return buf.getvalue()


# --- model checkpoints ("TOFM") ---

def encode_model(m: ModelParams) -> bytes:
    cfg = json.dumps(m.config, sort_keys=True).encode("utf-8")
    return b"".join([
        b"TOFM", struct.pack("<HI", VERSION, len(m.sizes)), _le(m.sizes, "u4"),
        struct.pack("<I", len(m.input_freqs)), _le(m.input_freqs, "f8"), struct.pack("<d", m.fundamental_freq),
        _le(m.flat, "f8"), struct.pack("<I", len(cfg)), cfg,
    ])


def decode_model(data: bytes) -> ModelParams:
    r = _Reader(data, "TOFM")
    r.header(b"TOFM")
    (nl,) = r.unpack("I")
    sizes = tuple(int(s) for s in r.array("u4", nl))
    (K,) = r.unpack("I")
    freqs = tuple(float(f) for f in r.array("f8", K))
    (f0,) = r.unpack("d")
    flat = r.array("f8", sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))
    (n,) = r.unpack("I")
    cfg = json.loads(r.take(n).decode("utf-8"))
    r.done()
    return ModelParams(sizes, flat, freqs, f0, cfg)


def write_model(path, m: ModelParams) -> Path:
    return atomic_write(path, encode_model(m))


def read_model(path) -> ModelParams:
    return decode_model(Path(path).read_bytes())


def loss_csv(train_loss, val_loss, lrs=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "learning_rate"])
    lrs = lrs if lrs is not None else [float("nan")] * len(train_loss)
    for e, (a, b, lr) in enumerate(zip(train_loss, val_loss, lrs)):
        w.writerow([e, repr(float(a)), repr(float(b)), repr(float(lr))])
    return buf.getvalue()


# --- waveforms, depth maps, reports ---

def waveform_csv(recon: ReconstructedTransient, row: int, col: int) -> str:
    v = recon.values[row, col] if recon.values.ndim == 3 else recon.values
    t = recon.grid.times()[:v.size]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_index", "time_s", "value"])
    for b in range(v.size):
        w.writerow([b, repr(float(t[b])), repr(float(v[b]))])
    return buf.getvalue()


def depth_to_mm16(dm: DepthMap) -> np.ndarray:
    """Millimetres as uint16; 0 marks invalid, valid depths are clipped to [1, 65535]."""
    mm = np.clip(np.rint(np.nan_to_num(dm.depth) * 1000.0), 1, 65535)
    return np.where(dm.valid, mm, 0).astype(np.uint16)


def encode_pgm16(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint16)
    if img.ndim != 2:
        raise FormatError("PGM export needs a 2-D image")
    h, w = img.shape
    # 16-bit PGM samples are big-endian
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + img.astype(">u2").tobytes()


def decode_pgm16(data: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 65535:
        raise FormatError("expected a 16-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pix = np.frombuffer(data[pos + 1:pos + 1 + 2 * w * h], dtype=">u2")
    if pix.size != w * h:
        raise FormatError("truncated PGM")
    return pix.reshape(h, w).astype(np.uint16)


def depth_csv(dm: DepthMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "depth_m", "valid"])
    for (i, j), d in np.ndenumerate(dm.depth):
        w.writerow([i, j, repr(float(d)) if dm.valid[i, j] else "", int(dm.valid[i, j])])
    return buf.getvalue()


def rows_csv(rows) -> str:
    """CSV of a list of dicts; columns in first-seen order."""
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
