"""Transient pixels, procedural scenes and their exact Fourier coefficients.

A transient pixel holds the scene impulse response on a fixed time grid.
Only the first ``grid.period_bins`` bins may carry energy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.ndimage import correlate

from .core import ConfigError, DepthRangeError, FourierCoeffs, TimeGrid


class PathKind(IntEnum):
    """Which transient path carries the true surface depth of a pixel."""

    FIRST = 0   # earliest return (direct-only, diffuse MPI, specular)
    MAX = 1     # strongest return (mixed edge pixels)
    SECOND = 2  # later return behind a spurious one (optical cross-talk)


@dataclass(frozen=True)
class TransientPixel:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_bins,):
            raise ValueError(f"expected {self.grid.n_bins} bins, got {v.shape}")
        if np.any(v < 0):
            raise ValueError("transient values must be non-negative")
        if np.any(v[self.grid.period_bins:] != 0):
            raise ValueError("transient has energy beyond one modulation period")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __add__(self, other: "TransientPixel") -> "TransientPixel":
        if other.grid != self.grid:
            raise ConfigError("grids differ")
        return TransientPixel(self.grid, self.values + other.values)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "TransientPixel":
        return cls(grid, np.zeros(grid.n_bins))


def _check_bins(depth, grid: TimeGrid) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(depth)) or np.any(depth < 0) or np.any(depth >= grid.d_max):
        raise DepthRangeError(f"depth must lie in [0, {grid.d_max:.4f}) m")
    b = grid.depth_to_bin(depth)
    if np.any(b >= grid.period_bins):
        raise DepthRangeError(f"depth rounds to bin {int(np.max(b))}, past the last bin of the period")
    return b


def make_direct(depth: float, amplitude: float, grid: TimeGrid) -> TransientPixel:
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    v = np.zeros(grid.n_bins)
    v[int(_check_bins(depth, grid))] = amplitude
    return TransientPixel(grid, v)


def make_two_path(d1: float, a1: float, d2: float, a2: float, grid: TimeGrid) -> TransientPixel:
    if not (a1 > 0 and a2 > 0):
        raise ValueError("amplitudes must be positive")
    if not d1 <= d2:
        raise ValueError("expected d1 <= d2")
    b = _check_bins([d1, d2], grid)
    v = np.zeros(grid.n_bins)
    np.add.at(v, b, [a1, a2])
    return TransientPixel(grid, v)


def make_diffuse_mpi(d_direct: float, a_direct: float, tail_gain: float, tail_decay: float,
                     grid: TimeGrid) -> TransientPixel:
    """Direct return plus an exponential tail ``tail_gain * exp(-tail_decay * (t - t_direct))``."""
    if not tail_decay > 0:
        raise ValueError("tail_decay must be positive")
    if tail_gain < 0:
        raise ValueError("tail_gain must be non-negative")
    v = make_direct(d_direct, a_direct, grid).values.copy()
    b = int(grid.depth_to_bin(d_direct))
    k = np.arange(1, grid.period_bins - b)
    v[b + 1:grid.period_bins] += tail_gain * np.exp(-tail_decay * k * grid.bin_width)
    return TransientPixel(grid, v)


# ---------------------------------------------------------------------------
# batched builders, values shaped (n, period_bins)

def _add_direct(values, bins, amps, rows=None):
    rows = np.arange(len(bins)) if rows is None else rows
    np.add.at(values, (rows, bins), amps)


def _add_tail(values, bins, gains, decays, grid):
    k = np.arange(values.shape[1])[None, :] - bins[:, None]
    tail = gains[:, None] * np.exp(-decays[:, None] * np.clip(k, 0, None) * grid.bin_width)
    values += np.where(k > 0, tail, 0.0)


@dataclass
class PixelBatch:
    """Flat batch of generated pixels (period-length transients)."""

    values: np.ndarray
    gt_depth: np.ndarray
    gt_kind: np.ndarray
    alt_depth: np.ndarray
    category: np.ndarray  # 0 direct, 1 two-path, 2 diffuse


SAMPLER_DEFAULTS = {
    "depth_min": 0.3,
    "depth_max": 6.0,
    "albedo_min": 0.1,
    "albedo_max": 1.0,
    "sep_min": 0.3,
    "sep_max": 2.0,
    "ratio_min": 0.1,
    "ratio_max": 0.9,
    "tail_gain_min": 0.001,
    "tail_gain_max": 0.02,
    "tail_decay_min": 2e8,
    "tail_decay_max": 1e9,
}


def sample_pixels(rng: np.random.Generator, n: int, grid: TimeGrid, mix=(0.4, 0.3, 0.3),
                  **ranges) -> PixelBatch:
    """Draw ``n`` random pixels: direct-only, two-path or diffuse-MPI in proportions ``mix``.

    Amplitudes follow ``albedo / depth**2``. Tail gains are relative to the
    direct amplitude. Two-path pixels keep the first path strongest unless
    ``ratio_max > 1``.
    """
    unknown = set(ranges) - set(SAMPLER_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown sampler parameter(s): {sorted(unknown)}")
    p = {**SAMPLER_DEFAULTS, **ranges}
    mix = np.asarray(mix, dtype=np.float64)
    if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ConfigError("mix must be three non-negative weights")
    d_hi = min(p["depth_max"], 0.98 * grid.d_max)

    cat = rng.choice(3, size=n, p=mix / mix.sum())
    albedo = rng.uniform(p["albedo_min"], p["albedo_max"], n)
    sep = rng.uniform(p["sep_min"], p["sep_max"], n)
    ratio = rng.uniform(p["ratio_min"], p["ratio_max"], n)
    gain = rng.uniform(p["tail_gain_min"], p["tail_gain_max"], n)
    decay = rng.uniform(p["tail_decay_min"], p["tail_decay_max"], n)
    u = rng.uniform(0.0, 1.0, n)

    hi = np.where(cat == 1, d_hi - sep, d_hi)
    d1 = p["depth_min"] + u * (hi - p["depth_min"])
    d2 = np.where(cat == 1, d1 + sep, np.nan)
    a1 = albedo / d1 ** 2

    values = np.zeros((n, grid.period_bins))
    b1 = grid.depth_to_bin(d1)
    _add_direct(values, b1, a1)
    two = np.flatnonzero(cat == 1)
    _add_direct(values, grid.depth_to_bin(d2[two]), a1[two] * ratio[two], rows=two)
    dif = np.flatnonzero(cat == 2)
    if dif.size:
        sub = values[dif]
        _add_tail(sub, b1[dif], gain[dif] * a1[dif], decay[dif], grid)
        values[dif] = sub
    # the true surface is the earliest return in every category
    kind = np.full(n, PathKind.FIRST, dtype=np.uint8)
    return PixelBatch(values, d1, kind, d2, cat.astype(np.uint8))


# ---------------------------------------------------------------------------
# scenes

SCENE_DEFAULTS = {
    "wall": {"depth": 1.0, "albedo": 0.5},
    "corner": {
        "corner_depth": 4.0, "slope": 0.04, "row_slope": 0.003,
        "albedo_min": 0.3, "albedo_max": 0.8,
        "tail_min": 0.0005, "tail_max": 0.02, "tail_width": 4.0, "tail_decay": 2e8,
    },
    "two_path_grid": {
        "d1_min": 0.5, "d1_max": 3.5, "sep_min": 1.0, "sep_max": 2.0,
        "ratio_min": 0.2, "ratio_max": 0.8, "albedo_min": 0.3, "albedo_max": 1.0,
    },
    "high_contrast": {
        "fg_depth": 1.0, "bg_depth": 3.0, "fg_amplitude": 10.0, "bg_amplitude": 0.1,
        "leak_fraction": 0.3, "leak_size": 5, "patch_frac": 0.5, "depth_jitter": 0.0,
    },
    "random_mix": {"mix_direct": 0.4, "mix_two_path": 0.3, "mix_diffuse": 0.3, **SAMPLER_DEFAULTS},
}


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    rows: int = 64
    cols: int = 64
    rng_seed: int = 0
    params: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        if self.kind not in SCENE_DEFAULTS:
            raise ConfigError(f"unknown scene kind {self.kind!r}; expected one of {sorted(SCENE_DEFAULTS)}")
        unknown = set(self.params) - set(SCENE_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"unknown parameter(s) for scene {self.kind!r}: {sorted(unknown)}")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("scene dimensions must be positive")
        return {**SCENE_DEFAULTS[self.kind], **self.params}


@dataclass
class TransientImage:
    grid: TimeGrid
    values: np.ndarray      # (rows, cols, n_bins) float32
    gt_depth: np.ndarray    # (rows, cols) float32, metres
    gt_kind: np.ndarray     # (rows, cols) uint8, PathKind
    alt_depth: np.ndarray   # (rows, cols) float32, other path depth or NaN

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.gt_depth = np.ascontiguousarray(self.gt_depth, dtype=np.float32)
        self.gt_kind = np.ascontiguousarray(self.gt_kind, dtype=np.uint8)
        self.alt_depth = np.ascontiguousarray(self.alt_depth, dtype=np.float32)
        r, c, n = self.values.shape
        if n != self.grid.n_bins:
            raise ValueError("bin count does not match grid")
        for a in (self.gt_depth, self.gt_kind, self.alt_depth):
            if a.shape != (r, c):
                raise ValueError("ground-truth planes must match image dims")

    @property
    def shape(self):
        return self.values.shape[:2]

    def pixel(self, row: int, col: int) -> TransientPixel:
        return TransientPixel(self.grid, self.values[row, col].astype(np.float64))

    def period_values(self) -> np.ndarray:
        """(rows, cols, period_bins) float64 view of the transients."""
        return self.values[..., :self.grid.period_bins].astype(np.float64)


def _assemble(grid, rows, cols, values, gt, kind, alt) -> TransientImage:
    full = np.zeros((rows, cols, grid.n_bins), dtype=np.float32)
    full[..., :grid.period_bins] = values.reshape(rows, cols, grid.period_bins)
    return TransientImage(grid, full, gt.reshape(rows, cols), kind.reshape(rows, cols),
                          alt.reshape(rows, cols))


def scene_generate(spec: SceneSpec, grid: TimeGrid = TimeGrid()) -> TransientImage:
    """Procedurally build a ground-truth transient image; pure function of ``spec``."""
    p = spec.resolved()
    rng = np.random.default_rng(spec.rng_seed)
    nr, nc = spec.rows, spec.cols
    n = nr * nc
    P = grid.period_bins
    yy, xx = np.meshgrid(np.arange(nr), np.arange(nc), indexing="ij")
    yy, xx = yy.ravel().astype(np.float64), xx.ravel().astype(np.float64)
    values = np.zeros((n, P))
    kind = np.full(n, PathKind.FIRST, dtype=np.uint8)
    alt = np.full(n, np.nan)

    if spec.kind == "wall":
        depth = np.full(n, float(p["depth"]))
        b = _check_bins(depth, grid)
        _add_direct(values, b, np.full(n, p["albedo"] / p["depth"] ** 2))

    elif spec.kind == "corner":
        dx = np.abs(xx - (nc - 1) / 2.0)
        depth = p["corner_depth"] - p["slope"] * dx + p["row_slope"] * (yy - (nr - 1) / 2.0)
        b = _check_bins(depth, grid)
        albedo = rng.uniform(p["albedo_min"], p["albedo_max"], n)
        amp = albedo / depth ** 2
        rel_gain = p["tail_min"] + (p["tail_max"] - p["tail_min"]) * np.exp(-dx / p["tail_width"])
        _add_direct(values, b, amp)
        _add_tail(values, b, rel_gain * amp, np.full(n, float(p["tail_decay"])), grid)

    elif spec.kind == "two_path_grid":
        d1 = rng.uniform(p["d1_min"], p["d1_max"], n)
        sep = rng.uniform(p["sep_min"], p["sep_max"], n)
        ratio = rng.uniform(p["ratio_min"], p["ratio_max"], n)
        albedo = rng.uniform(p["albedo_min"], p["albedo_max"], n)
        depth, alt = d1, d1 + sep
        b1, b2 = _check_bins(d1, grid), _check_bins(alt, grid)
        a1 = albedo / d1 ** 2
        _add_direct(values, b1, a1)
        _add_direct(values, b2, a1 * ratio)

    elif spec.kind == "high_contrast":
        size = max(1, int(round(p["patch_frac"] * min(nr, nc))))
        r0, c0 = (nr - size) // 2, (nc - size) // 2
        fg = np.zeros((nr, nc), dtype=bool)
        fg[r0:r0 + size, c0:c0 + size] = True
        k = int(p["leak_size"])
        # exact count of foreground pixels in the k x k window around each pixel
        count = correlate(fg.astype(np.int64), np.ones((k, k), dtype=np.int64), mode="constant")
        leak = p["leak_fraction"] * p["fg_amplitude"] * count / (k * k)
        fg, leak = fg.ravel(), np.where(fg.ravel(), 0.0, leak.ravel())
        jitter = rng.uniform(-p["depth_jitter"], p["depth_jitter"], n)
        depth = np.where(fg, p["fg_depth"], p["bg_depth"]) + jitter
        b = _check_bins(depth, grid)
        _add_direct(values, b, np.where(fg, p["fg_amplitude"], p["bg_amplitude"]))
        leaky = np.flatnonzero(leak > 0)
        leak_depth = p["fg_depth"] + jitter[leaky]
        _add_direct(values, _check_bins(leak_depth, grid), leak[leaky], rows=leaky)
        kind[leaky] = PathKind.SECOND
        alt[leaky] = leak_depth

    elif spec.kind == "random_mix":
        mix = (p["mix_direct"], p["mix_two_path"], p["mix_diffuse"])
        ranges = {k: p[k] for k in SAMPLER_DEFAULTS}
        batch = sample_pixels(rng, n, grid, mix=mix, **ranges)
        values, depth, kind, alt = batch.values, batch.gt_depth, batch.gt_kind, batch.alt_depth
        _check_bins(depth, grid)

    return _assemble(grid, nr, nc, values, np.asarray(depth), kind, alt)


# ---------------------------------------------------------------------------

def fourier_coefficients(values, grid: TimeGrid, n_harmonics: int) -> FourierCoeffs:
    """Exact coefficients of harmonics 1..n of transients ``values`` (..., >= period_bins).

    b_cos = sum_t a(t) cos(w_k t) dt and b_sin = sum_t a(t) sin(w_k t) dt over one period.
    """
    if n_harmonics < 1:
        raise ConfigError("n_harmonics must be >= 1")
    grid.harmonic_index(grid.harmonics(n_harmonics))
    v = np.asarray(values, dtype=np.float64)[..., :grid.period_bins]
    spec = np.fft.rfft(v, axis=-1)[..., 1:n_harmonics + 1] * grid.bin_width
    return FourierCoeffs(grid.harmonics(n_harmonics), spec.real, -spec.imag)


def ground_truth_fourier(pixel, n_harmonics: int, grid: TimeGrid | None = None) -> FourierCoeffs:
    """Noise-free Fourier coefficients of a pixel, an image, or a raw value array."""
    if isinstance(pixel, TransientPixel):
        return fourier_coefficients(pixel.values, pixel.grid, n_harmonics)
    if isinstance(pixel, TransientImage):
        return fourier_coefficients(pixel.values, pixel.grid, n_harmonics)
    if grid is None:
        raise ConfigError("grid is required for raw value arrays")
    return fourier_coefficients(pixel, grid, n_harmonics)
