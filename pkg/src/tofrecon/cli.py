"""Batch command-line front end: simulate | train | reconstruct | decode | eval | sweep."""
from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import RunConfig
from .core import ConfigError, DepthRangeError, FourierCoeffs
from .decode import DECODERS, DepthMap, decode_reconstruction, phasor_decode
from .dtof import truncated_ift
from .evaluate import format_table, frequency_sweep, mask_invalid, noise_sweep, percentile_mae
from .freqnet import TrainingDiverged, build_training_set, extrapolate, train
from .itof import simulate_tensor
from .transient import ground_truth_fourier, scene_generate

log = logging.getLogger("tofrecon")

COMMANDS = ("simulate", "train", "reconstruct", "decode", "eval", "sweep")


class InputMissing(FileNotFoundError):
    pass


def _input(cfg: RunConfig, key: str) -> Path:
    p = cfg[key]
    if not p:
        raise ConfigError(f"{key} must name an input file for this command")
    path = Path(p)
    if not path.is_file():
        raise InputMissing(f"input file not found ({key}): {path}")
    return path


def _scene_image(cfg: RunConfig):
    """Ground-truth image from io.transient if given, else generated from the scene keys."""
    if cfg["io.transient"]:
        img = formats.read_transient(_input(cfg, "io.transient"))
        if img.grid != cfg.grid():
            raise ConfigError("io.transient grid does not match the grid.* settings")
        return img
    return scene_generate(cfg.scene(), cfg.grid())


def _measurement(cfg: RunConfig, img=None):
    if cfg["io.measurement"]:
        return formats.read_measurement(_input(cfg, "io.measurement"))
    img = _scene_image(cfg) if img is None else img
    return simulate_tensor(img, cfg["sim.freqs"], cfg.sensor(), cfg["sim.n_frames"], cfg.substream("noise"),
                           noise=cfg["sim.noise"])


def _coefficients(cfg: RunConfig, img=None, tensor=None) -> FourierCoeffs:
    """Harmonics 1..S from the ground truth (recon.source=gt) or the trained model (recon.source=model)."""
    src = cfg["recon.source"]
    if src == "gt":
        img = _scene_image(cfg) if img is None else img
        return ground_truth_fourier(img, cfg["recon.S"])
    if src == "model":
        model = formats.read_model(_input(cfg, "io.model"))
        tensor = _measurement(cfg) if tensor is None else tensor
        return extrapolate(model, tensor)
    raise ConfigError(f"bad value for recon.source: {src!r}; expected 'gt' or 'model'")


def _decode(cfg: RunConfig, decoder: str, img=None, tensor=None) -> DepthMap:
    if decoder not in DECODERS:
        raise ConfigError(f"bad value for decode.decoder: {decoder!r}; expected one of {DECODERS}")
    grid = cfg.grid()
    if decoder == "phasor":
        tensor = _measurement(cfg, img) if tensor is None else tensor
        return phasor_decode(tensor.coeffs(), grid)
    coeffs = _coefficients(cfg, img, tensor)
    recon = truncated_ift(coeffs, grid, cfg["recon.window"])
    amp = None
    if decoder == "xtalk":
        tensor = _measurement(cfg, img) if tensor is None else tensor
        amp = tensor.amplitude[..., 0]
    return decode_reconstruction(decoder, recon, amp, cfg["decode.floor_frac"])


def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    img = _scene_image(cfg)
    tensor = _measurement(cfg, img)
    files = [formats.write_transient(out / "transient.tofk", img),
             formats.write_measurement(out / "measurement.tofb", tensor)]
    if cfg["sim.csv"]:
        files.append(formats.atomic_write_text(out / "measurement.csv", formats.measurement_csv(tensor)))
    return files


def cmd_train(cfg: RunConfig, out: Path) -> list:
    tc = cfg.train_config()
    data = build_training_set(cfg["train.n_samples"], cfg.grid(), cfg.sensor(), cfg["train.S"],
                              rng_seed=cfg.substream("train_data"), mix=cfg["train.mix"],
                              frames=(cfg["train.frames_min"], cfg["train.frames_max"]), input_freqs=cfg["sim.freqs"])
    res = train(data, tc)
    log.info("best epoch %d, validation loss %.5f", res.best_epoch, res.val_loss[res.best_epoch])
    lrs = [tc.lr_at(e) for e in range(len(res.train_loss))]
    return [formats.write_model(out / "model.tofm", res.params),
            formats.atomic_write_text(out / "loss.csv", formats.loss_csv(res.train_loss, res.val_loss, lrs))]


def _pixels(spec: str, shape) -> list:
    out = []
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            r, c = (int(x) for x in item.split(":"))
        except ValueError:
            raise ConfigError(f"bad value for recon.pixels: {item!r}; expected row:col[;row:col...]") from None
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise ConfigError(f"recon.pixels entry {item} is outside the {shape[0]}x{shape[1]} image")
        out.append((r, c))
    return out


def cmd_reconstruct(cfg: RunConfig, out: Path) -> list:
    coeffs = _coefficients(cfg)
    recon = truncated_ift(coeffs, cfg.grid(), cfg["recon.window"])
    files = []
    for r, c in _pixels(cfg["recon.pixels"], recon.values.shape[:2]):
        files.append(formats.atomic_write_text(out / f"waveform_r{r}_c{c}.csv", formats.waveform_csv(recon, r, c)))
    if cfg["recon.volume"]:
        buf = io.BytesIO()
        np.save(buf, recon.values.astype(np.float32), allow_pickle=False)
        files.append(formats.atomic_write(out / "reconstruction.npy", buf.getvalue()))
    return files


def cmd_decode(cfg: RunConfig, out: Path) -> list:
    dm = _decode(cfg, cfg["decode.decoder"])
    return [formats.atomic_write(out / "depth.pgm", formats.encode_pgm16(formats.depth_to_mm16(dm))),
            formats.atomic_write_text(out / "depth.csv", formats.depth_csv(dm))]


def cmd_eval(cfg: RunConfig, out: Path) -> list:
    img = _scene_image(cfg)
    tensor = _measurement(cfg, img)
    gt = DepthMap(img.gt_depth, np.isfinite(img.gt_depth), "gt")
    edge = cfg["eval.edge_thresh"]
    mask = mask_invalid(gt, cfg.grid(), tensor.saturated, edge if edge > 0 else None)
    rows = []
    for dec in cfg["eval.decoders"]:
        dm = _decode(cfg, dec, img, tensor)
        rep = percentile_mae(dm, gt, mask, cfg["eval.invalid_pred"], label=dec)
        rows.append(rep.row())
    return [formats.atomic_write_text(out / "report.csv", formats.rows_csv(rows)),
            formats.atomic_write_text(out / "report.txt", format_table(rows))]


def cmd_sweep(cfg: RunConfig, out: Path) -> list:
    img = _scene_image(cfg)
    edge = cfg["eval.edge_thresh"]
    edge = edge if edge > 0 else None
    model = formats.read_model(_input(cfg, "io.model")) if cfg["io.model"] else None
    kind = cfg["sweep.kind"]
    if kind == "frequency":
        tensor = _measurement(cfg, img) if model is not None else None
        res = frequency_sweep(img, cfg["sweep.S_list"], cfg["decode.decoder"], cfg["recon.window"], model, tensor,
                              edge_thresh=edge)
        keys = ("route", "S")
    elif kind == "noise":
        res = noise_sweep(img, cfg["sweep.decoders"], cfg["sweep.frame_counts"], cfg.sensor(), model,
                          cfg["recon.window"], cfg.substream("noise"), cfg["sim.freqs"], edge_thresh=edge)
        keys = ("decoder", "n_frames")
    else:
        raise ConfigError(f"bad value for sweep.kind: {kind!r}; expected 'frequency' or 'noise'")
    return [formats.atomic_write_text(out / f"{kind}_sweep.csv", formats.rows_csv(res.rows)),
            formats.atomic_write_text(out / f"{kind}_sweep.txt", format_table(res.rows, keys))]


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _set_pairs(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tofrecon", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    p.add_argument("--out-dir", default=".", help="output directory (created if needed)")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS/OpenMP thread cap (takes effect when launched through the console script)")
    p.add_argument("--decoder", choices=DECODERS, help="shortcut for --set decode.decoder=...")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        over = _set_pairs(args.set)
        if args.seed is not None:
            over["seed"] = str(args.seed)
        if args.decoder:
            over["decode.decoder"] = args.decoder
        if args.config and not Path(args.config).is_file():
            raise InputMissing(f"config file not found: {args.config}")
        cfg = RunConfig.load(args.config, over)
        for key in ("io.transient", "io.measurement", "io.model"):
            if cfg[key]:
                _input(cfg, key)  # fail before any work, even if this command would not read it
        out = Path(args.out_dir)
        files = HANDLERS[args.command](cfg, out)
        files.append(formats.atomic_write_text(out / f"{args.command}.config", cfg.echo()))
    except (ConfigError, InputMissing) as e:
        print(f"tofrecon {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (DepthRangeError, TrainingDiverged, formats.FormatError, OSError) as e:
        print(f"tofrecon {args.command}: error: {e}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


def main(argv=None):
    sys.exit(run(argv))
