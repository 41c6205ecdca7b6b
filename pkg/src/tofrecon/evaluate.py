"""Depth-error metrics, masking rules and the frequency / noise sweeps."""
from __future__ import annotations

import warnings

from dataclasses import dataclass, field

import numpy as np

from .core import C, ConfigError, TimeGrid
from .decode import DepthMap, decode_reconstruction, phasor_decode
from .dtof import truncated_ift
from .freqnet import ModelParams, extrapolate
from .itof import MeasurementTensor, SensorConfig, normalize, simulate_tensor
from .transient import TransientImage, ground_truth_fourier

GROUPS = ((0, 75), (75, 85), (85, 95), (95, 99))
EDGE_THRESH = 0.1  # metres of 3x3 ground-truth depth range


@dataclass
class PercentileReport:
    mae_mm: tuple
    n_pixels: int
    n_masked_out: int = 0
    n_invalid_pred: int = 0
    groups: tuple = GROUPS
    label: str = ""

    def row(self) -> dict:
        out = {"label": self.label}
        out.update({f"{a}-{b}%": m for (a, b), m in zip(self.groups, self.mae_mm)})
        out.update(n_pixels=self.n_pixels, n_masked_out=self.n_masked_out, n_invalid_pred=self.n_invalid_pred)
        return out


def group_slices(n: int, groups=GROUPS) -> list:
    """Half-open index ranges [floor(a n / 100), floor(b n / 100)) into a sorted vector."""
    return [slice(a * n // 100, b * n // 100) for a, b in groups]


def percentile_groups(errors_mm, groups=GROUPS) -> tuple:
    """Mean of each percentile group of the sorted errors; the top 1% is ignored."""
    e = np.sort(np.abs(np.asarray(errors_mm, dtype=np.float64)).ravel())
    if e.size == 0:
        raise ValueError("no pixels to evaluate")
    out = []
    for sl in group_slices(e.size, groups):
        chunk = e[sl]
        out.append(float(chunk.mean()) if chunk.size else float("nan"))
    return tuple(out)


def _depth(x) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, DepthMap):
        return x.depth, x.valid
    d = np.asarray(x, dtype=np.float64)
    return d, np.isfinite(d)


def percentile_mae(pred, gt, mask=None, invalid_pred: str = "worst", label: str = "") -> PercentileReport:
    """Percentile-group MAE in millimetres.

    Pixels inside ``mask`` where the prediction is invalid are either ranked
    as the worst errors (``invalid_pred="worst"``, infinite error) or dropped
    (``"exclude"``).
    """
    pd, pv = _depth(pred)
    gd, gv = _depth(gt)
    if pd.shape != gd.shape:
        raise ValueError(f"prediction shape {pd.shape} does not match ground truth {gd.shape}")
    m = gv if mask is None else (np.asarray(mask, dtype=bool) & gv)
    if not m.any():
        raise ValueError("mask selects no pixels")
    bad = m & ~pv
    if invalid_pred == "worst":
        err = np.where(bad, np.inf, np.abs(pd - gd) * 1000.0)[m]
    elif invalid_pred == "exclude":
        err = (np.abs(pd - gd) * 1000.0)[m & pv]
    else:
        raise ConfigError(f"invalid_pred must be 'worst' or 'exclude', got {invalid_pred!r}")
    return PercentileReport(percentile_groups(err), int(err.size), int(m.size - m.sum()), int(bad.sum()),
                            label=label)


def depth_stddev(pred, mask=None) -> float:
    """Population standard deviation of the masked depths, in millimetres."""
    d, v = _depth(pred)
    m = v if mask is None else (v & np.asarray(mask, dtype=bool))
    if m.sum() < 2:
        raise ValueError("need at least two pixels for a standard deviation")
    return float(np.std(d[m]) * 1000.0)


def _neighbourhood_range(depth: np.ndarray) -> np.ndarray:
    pad = np.pad(depth, 1, mode="edge")
    H, W = depth.shape
    win = np.stack([pad[i:i + H, j:j + W] for i in range(3) for j in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        return np.nanmax(win, axis=0) - np.nanmin(win, axis=0)


def mask_invalid(gt, grid: TimeGrid, saturated=None, edge_thresh: float | None = EDGE_THRESH) -> np.ndarray:
    """True for pixels that take part in evaluation.

    Drops invalid ground truth, depths at or beyond d_max, saturated pixels
    and pixels whose 3x3 ground-truth neighbourhood spans more than
    ``edge_thresh`` metres (flying pixels at depth edges). ``edge_thresh=None``
    skips the edge rule, for scenes without spatial structure.
    """
    d, v = _depth(gt)
    m = v & (d < grid.d_max)
    if saturated is not None:
        m &= np.asarray(saturated) == 0
    if edge_thresh is not None and d.ndim == 2:
        m &= ~(_neighbourhood_range(np.where(v, d, np.nan)) > edge_thresh)
    return m


def phase_depth(coeffs, freq: float, gt_depth) -> np.ndarray:
    """Single-frequency phase depth, unwrapped with the ground truth (a best-case baseline)."""
    hit = np.flatnonzero(np.isclose(coeffs.freqs, freq))
    if hit.size == 0:
        raise ConfigError(f"frequency {freq} not present in the coefficients")
    k = int(hit[0])
    wrap = C / (2 * freq)
    d = np.mod(np.arctan2(coeffs.sin[..., k], coeffs.cos[..., k]), 2 * np.pi) / (2 * np.pi) * wrap
    n = np.round((np.asarray(gt_depth) - d) / wrap)
    return d + n * wrap


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def add(self, report: PercentileReport, **keys):
        self.rows.append({**keys, **report.row()})

    def lookup(self, **keys) -> dict:
        hits = [r for r in self.rows if all(r.get(k) == v for k, v in keys.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {keys}")
        return hits[0]


def frequency_sweep(image: TransientImage, S_list, decoder: str = "max", window: str = "none",
                    model: ModelParams | None = None, tensor: MeasurementTensor | None = None,
                    normalized: bool = False, mask=None, edge_thresh: float | None = EDGE_THRESH) -> SweepResult:
    """Percentile MAE against the highest harmonic used.

    The ideal route truncates the ground-truth coefficients at every S; with a
    model and tensor, the learned route is added for S equal to the model's.
    """
    grid = image.grid
    S_list = sorted(int(s) for s in S_list)
    if not S_list or S_list[0] < 1:
        raise ConfigError("S_list must hold positive harmonic counts")
    gt = DepthMap(image.gt_depth, np.isfinite(image.gt_depth), "gt")
    m = mask_invalid(gt, grid, edge_thresh=edge_thresh) if mask is None else mask
    full = ground_truth_fourier(image, S_list[-1])
    amp = 2 * full.norm()[..., 0]
    res = SweepResult()
    for S in S_list:
        c = full.truncate(S)
        recon = truncated_ift(normalize(c) if normalized else c, grid, window)
        pred = decode_reconstruction(decoder, recon, amp)
        res.add(percentile_mae(pred, gt, m), route="ideal", S=S, decoder=decoder, window=window,
                max_freq_mhz=S * grid.fundamental_freq / 1e6)
    if model is not None:
        if tensor is None:
            raise ConfigError("the learned route needs a measurement tensor")
        recon = truncated_ift(extrapolate(model, tensor), grid, window)
        pred = decode_reconstruction(decoder, recon, tensor.amplitude[..., 0])
        res.add(percentile_mae(pred, gt, m), route="learned", S=model.S, decoder=decoder, window=window,
                max_freq_mhz=model.S * grid.fundamental_freq / 1e6)
    return res


def noise_sweep(image: TransientImage, decoders, frame_counts, sensor: SensorConfig = SensorConfig(),
                model: ModelParams | None = None, window: str = "none", rng_seed: int = 0,
                freqs=(20e6, 100e6), mask=None, edge_thresh: float | None = EDGE_THRESH) -> SweepResult:
    """Percentile MAE per decoder and frame count; frame count 0 means noise-free.

    Decoder names: ``phasor`` (multi-frequency lookup on the measurement),
    ``phase100`` (ground-truth-unwrapped phase at the highest input frequency)
    and ``learned-<waveform decoder>`` (model extrapolation, truncated IFT,
    then e.g. ``learned-max``).
    """
    grid = image.grid
    gt = DepthMap(image.gt_depth, np.isfinite(image.gt_depth), "gt")
    base = mask_invalid(gt, grid, edge_thresh=edge_thresh) if mask is None else mask
    res = SweepResult()
    for n in frame_counts:
        n = int(n)
        if n < 0:
            raise ConfigError("frame counts must be >= 0")
        tensor = simulate_tensor(image, freqs, sensor, max(n, 1), rng_seed, noise=n > 0)
        coeffs = tensor.coeffs()
        m = base & (tensor.saturated == 0)
        for dec in decoders:
            if dec == "phasor":
                pred = phasor_decode(coeffs, grid)
            elif dec == "phase100":
                unit = normalize(coeffs)
                pred = DepthMap(phase_depth(unit, max(freqs), image.gt_depth), unit.valid, dec)
            elif dec.startswith("learned-"):
                if model is None:
                    raise ConfigError(f"decoder {dec!r} needs a trained model")
                recon = truncated_ift(extrapolate(model, tensor), grid, window)
                pred = decode_reconstruction(dec.split("-", 1)[1], recon, tensor.amplitude[..., 0])
            else:
                raise ConfigError(f"unknown sweep decoder {dec!r}")
            res.add(percentile_mae(pred, gt, m), decoder=dec, n_frames=n)
    return res


def format_table(rows, label_keys=("label",), groups=GROUPS) -> str:
    """Plain-text table: one line per method, one column per percentile group (mm)."""
    heads = [f"{a}-{b}%" for a, b in groups]
    labels = [" ".join(str(r.get(k, "")) for k in label_keys if r.get(k, "") != "") for r in rows]
    w = max([len("method")] + [len(s) for s in labels])
    lines = ["method".ljust(w) + "".join(h.rjust(10) for h in heads)]
    for lab, r in zip(labels, rows):
        lines.append(lab.ljust(w) + "".join(f"{r[h]:10.2f}" for h in heads))
    return "\n".join(lines) + "\n"
