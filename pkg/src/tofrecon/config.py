"""Flat ``key=value`` run configuration with dotted sections and typed defaults."""
from __future__ import annotations

import zlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .core import ConfigError, TimeGrid
from .freqnet import TrainConfig
from .itof import SensorConfig
from .transient import SCENE_DEFAULTS, SceneSpec

_SENSOR = {f"sensor.{f.name}": f.default for f in fields(SensorConfig)}
_TRAIN = {f"train.{f.name}": f.default for f in fields(TrainConfig) if f.name != "rng_seed"}

DEFAULTS = {
    "seed": 0,
    "grid.bin_width": 50e-12,
    "grid.n_bins": 2000,
    "grid.fundamental_freq": 20e6,
    "scene.kind": "wall",
    "scene.rows": 64,
    "scene.cols": 64,
    "sim.freqs": (20e6, 100e6),
    "sim.n_frames": 2,
    "sim.noise": True,
    "sim.csv": False,
    **_SENSOR,
    **_TRAIN,
    "train.n_samples": 50000,
    "train.S": 20,
    "train.frames_min": 1,
    "train.frames_max": 12,
    "train.mix": (0.4, 0.3, 0.3),
    "recon.source": "gt",
    "recon.S": 20,
    "recon.window": "hamming",
    "recon.pixels": "0:0",
    "recon.volume": False,
    "decode.decoder": "max",
    "decode.floor_frac": 0.1,
    "eval.decoders": ("phasor", "max"),
    "eval.edge_thresh": 0.1,
    "eval.invalid_pred": "worst",
    "sweep.kind": "frequency",
    "sweep.S_list": (5, 10, 20, 30),
    "sweep.frame_counts": (0, 1, 2, 4, 8),
    "sweep.decoders": ("phasor", "phase100"),
    "io.transient": "",
    "io.measurement": "",
    "io.model": "",
}

SCENE_KEYS = {f"scene.{k}": v for kind in SCENE_DEFAULTS.values() for k, v in kind.items()}


def _parse(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                return tuple(int(s) for s in items)
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    return str(v)


def parse_lines(text: str, source: str = "<config>") -> dict:
    """Raw ``key=value`` pairs; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


class RunConfig:
    """Resolved configuration: defaults, then config file, then overrides."""

    def __init__(self, raw: dict | None = None):
        self.values = dict(DEFAULTS)
        raw = dict(raw or {})
        # scene kind first, so scene parameter keys can be checked against it
        if "scene.kind" in raw:
            self.values["scene.kind"] = _parse("scene.kind", str(raw.pop("scene.kind")), "")
        kind = self.values["scene.kind"]
        if kind not in SCENE_DEFAULTS:
            raise ConfigError(f"bad value for scene.kind: {kind!r}; expected one of {sorted(SCENE_DEFAULTS)}")
        self.scene_params = {f"scene.{k}": v for k, v in SCENE_DEFAULTS[kind].items()}
        for k, v in raw.items():
            if k in DEFAULTS:
                self.values[k] = v if not isinstance(v, str) else _parse(k, v, DEFAULTS[k])
            elif k in self.scene_params:
                self.scene_params[k] = v if not isinstance(v, str) else _parse(k, v, self.scene_params[k])
            elif k in SCENE_KEYS:
                raise ConfigError(f"key {k} does not apply to scene.kind={kind}")
            else:
                raise ConfigError(f"unknown config key: {k}")

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise FileNotFoundError(str(p))
            raw.update(parse_lines(p.read_text(), str(p)))
        raw.update(overrides or {})
        return cls(raw)

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return self.scene_params[key]

    def items(self):
        return sorted({**self.values, **self.scene_params}.items())

    def echo(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.items())

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.items() if k.startswith(pre)}

    # --- typed views ---

    def substream(self, name: str) -> int:
        """Seed for a named random stream, derived from the top-level seed."""
        ss = np.random.SeedSequence([int(self["seed"]), zlib.crc32(name.encode())])
        return int(ss.generate_state(1)[0])

    def grid(self) -> TimeGrid:
        return TimeGrid(**self.section("grid"))

    def sensor(self) -> SensorConfig:
        return SensorConfig(**self.section("sensor"))

    def scene(self) -> SceneSpec:
        params = {k[len("scene."):]: v for k, v in self.scene_params.items()}
        return SceneSpec(self["scene.kind"], self["scene.rows"], self["scene.cols"], self.substream("scene"), params)

    def train_config(self) -> TrainConfig:
        t = self.section("train")
        keep = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in t.items() if k in keep}, rng_seed=self.substream("train"))
