"""Multi-frequency iToF measurement simulator.

Light source ``m(t) = P (1 + cos wt)``. Each raw sub-measurement gates the
returning radiance with ``1 + cos(wt - phi)`` for phi in {0, pi/2, pi, 3pi/2};
differencing opposite phases gives the zero-mean brightness pair. Electron
counts scale with ``quantum_efficiency * electrons_per_unit * exposure``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .core import ConfigError, FourierCoeffs, TimeGrid
from .transient import TransientImage, TransientPixel

DEFAULT_FREQS = (20e6, 100e6)


@dataclass(frozen=True)
class SensorConfig:
    source_avg_power: float = 32.0
    exposure: float = 0.3e-3
    quantum_efficiency: float = 0.8
    electrons_per_unit: float = 1e6
    read_noise_sigma: float = 5.0
    full_well: float = 5e5
    ambient_offset: float = 0.0
    photon_noise: bool = True
    shot_model: str = "gaussian"  # or "poisson"

    def __post_init__(self):
        for name in ("source_avg_power", "exposure", "quantum_efficiency", "electrons_per_unit", "full_well"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"sensor.{name} must be positive")
        if self.quantum_efficiency > 1:
            raise ConfigError("sensor.quantum_efficiency must be in (0, 1]")
        if self.read_noise_sigma < 0 or self.ambient_offset < 0:
            raise ConfigError("sensor.read_noise_sigma and sensor.ambient_offset must be >= 0")
        if self.shot_model not in ("gaussian", "poisson"):
            raise ConfigError("sensor.shot_model must be 'gaussian' or 'poisson'")

    @property
    def gain(self) -> float:
        return self.quantum_efficiency * self.electrons_per_unit * self.exposure

    def noiseless(self) -> "SensorConfig":
        return replace(self, read_noise_sigma=0.0, photon_noise=False)


class Measurement(NamedTuple):
    b_cos: np.ndarray
    b_sin: np.ndarray
    saturated: np.ndarray


def pixel_rng(seed: int, row: int, col: int) -> np.random.Generator:
    """Independent stream for one pixel; frames are drawn from it in order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(row), int(col)]))


def _as_values(pixel) -> tuple[np.ndarray, TimeGrid]:
    if isinstance(pixel, TransientPixel):
        return pixel.values[: pixel.grid.period_bins], pixel.grid
    raise TypeError("expected a TransientPixel")


def _projections(values: np.ndarray, grid: TimeGrid, freqs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sum_t a cos(wt), sum_t a sin(wt) per frequency, and sum_t a; values (..., P)."""
    k = grid.harmonic_index(freqs)
    arg = 2 * np.pi * np.outer(np.arange(grid.period_bins), k) / grid.period_bins
    return values @ np.cos(arg), values @ np.sin(arg), values.sum(axis=-1)


def correlate_ideal(pixel: TransientPixel, freq: float, phase_shift: float, sensor: SensorConfig) -> float:
    """Noise-free zero-mean correlation, in electrons.

    Ambient light and the DC part of the source drop out because the
    demodulation function has zero mean.
    """
    values, grid = _as_values(pixel)
    k = grid.harmonic_index(freq)[0]
    t = 2 * np.pi * k * np.arange(grid.period_bins) / grid.period_bins
    return float(sensor.gain * sensor.source_avg_power / 2 * np.sum(values * np.cos(t - phase_shift)))


def four_phase_means(values: np.ndarray, grid: TimeGrid, freqs, sensor: SensorConfig) -> np.ndarray:
    """Expected electrons of the 0, 90, 180, 270 degree sub-measurements; shape (..., K, 4)."""
    pc, ps, total = _projections(values, grid, freqs)
    g, P = sensor.gain, sensor.source_avg_power
    dc = sensor.ambient_offset + g * P * total[..., None]
    x, y = g * P / 2 * pc, g * P / 2 * ps
    return np.stack([dc + x, dc + y, dc - x, dc - y], axis=-1)


def add_noise(mean_electrons, sensor: SensorConfig, rng: np.random.Generator):
    """Read and photon noise; returns (electrons, saturated) clamped to [0, full_well]."""
    mean = np.asarray(mean_electrons, dtype=np.float64)
    if np.any(mean < 0):
        raise ValueError("mean electron count must be non-negative")
    out = _noisy(mean, sensor, rng)
    sat = out >= sensor.full_well
    return np.clip(out, 0.0, sensor.full_well), sat


def _noisy(mean, sensor: SensorConfig, rng: np.random.Generator, z=None):
    if not sensor.photon_noise:
        z = rng.standard_normal(mean.shape) if z is None else z
        return mean + sensor.read_noise_sigma * z
    if sensor.shot_model == "poisson":
        return rng.poisson(mean).astype(np.float64) + sensor.read_noise_sigma * rng.standard_normal(mean.shape)
    z = rng.standard_normal(mean.shape) if z is None else z
    return mean + np.sqrt(mean + sensor.read_noise_sigma ** 2) * z


def _difference(sub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return sub[..., 0] - sub[..., 2], sub[..., 1] - sub[..., 3]


def four_phase_measure(pixel: TransientPixel, freq: float, sensor: SensorConfig,
                       rng: np.random.Generator) -> Measurement:
    """One noisy frame: (m0 - m180, m90 - m270) and a saturation flag."""
    values, grid = _as_values(pixel)
    means = four_phase_means(values, grid, [freq], sensor)[0]
    sub, sat = add_noise(means, sensor, rng)
    bc, bs = _difference(sub)
    return Measurement(float(bc), float(bs), bool(sat.any()))


def average_frames(pixel: TransientPixel, freq: float, sensor: SensorConfig, n_frames: int,
                   rng: np.random.Generator) -> Measurement:
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    draws = [four_phase_measure(pixel, freq, sensor, rng) for _ in range(n_frames)]
    return Measurement(float(np.mean([d.b_cos for d in draws])),
                       float(np.mean([d.b_sin for d in draws])),
                       any(d.saturated for d in draws))


def simulate_pixels(values: np.ndarray, grid: TimeGrid, freqs, sensor: SensorConfig, n_frames,
                    rng_seed: int, keys: np.ndarray, noise: bool = True):
    """Frame-averaged brightness pairs for a flat batch of transients.

    ``keys`` holds one (row, col) per pixel; pixel noise comes from
    ``pixel_rng(rng_seed, row, col)`` so results do not depend on batching.
    Returns (b_cos, b_sin, saturated_bitmask) with shapes (N, K), (N, K), (N,).
    """
    values = np.asarray(values, dtype=np.float64)[:, :grid.period_bins]
    n = values.shape[0]
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    K = freqs.size
    if K > 8:
        raise ConfigError("at most 8 input frequencies (saturation bitmask is one byte)")
    frames = np.broadcast_to(np.asarray(n_frames, dtype=np.int64), (n,))
    if np.any(frames < 1):
        raise ConfigError("n_frames must be >= 1")
    means = four_phase_means(values, grid, freqs, sensor)  # (N, K, 4)
    if not noise:
        sat = np.any(means >= sensor.full_well, axis=-1)
        bc, bs = _difference(np.clip(means, 0.0, sensor.full_well))
        return bc, bs, _bitmask(sat)

    fmax = int(frames.max())
    acc = np.zeros((n, K, 4))
    sat = np.zeros((n, K), dtype=bool)
    if sensor.photon_noise and sensor.shot_model == "poisson":
        for i in range(n):
            rng = pixel_rng(rng_seed, *keys[i])
            for _ in range(frames[i]):
                s, st = add_noise(means[i], sensor, rng)
                acc[i] += s
                sat[i] |= st.any(axis=-1)
    else:
        z = np.zeros((n, fmax, K, 4))
        for i in range(n):
            z[i, :frames[i]] = pixel_rng(rng_seed, *keys[i]).standard_normal((frames[i], K, 4))
        for f in range(fmax):
            live = frames > f
            raw = _noisy(means[live], sensor, None, z[live, f])
            sat[live] |= np.any(raw >= sensor.full_well, axis=-1)
            acc[live] += np.clip(raw, 0.0, sensor.full_well)
    sub = acc / frames[:, None, None]
    bc, bs = _difference(sub)
    return bc, bs, _bitmask(sat)


def _bitmask(sat: np.ndarray) -> np.ndarray:
    weights = (1 << np.arange(sat.shape[-1])).astype(np.uint8)
    return (sat.astype(np.uint8) * weights).sum(axis=-1).astype(np.uint8)


@dataclass
class MeasurementTensor:
    """Per-pixel brightness pairs and amplitudes at the input frequencies."""

    freqs: np.ndarray
    b_cos: np.ndarray       # (rows, cols, K) float32, electrons
    b_sin: np.ndarray
    amplitude: np.ndarray   # (rows, cols, K) float32, 2 * |pair|
    saturated: np.ndarray   # (rows, cols) uint8, bit k set when frequency k saturated
    n_frames: np.ndarray    # (rows, cols) uint16
    rng_seed: int = 0

    def __post_init__(self):
        self.freqs = np.atleast_1d(np.asarray(self.freqs, dtype=np.float64))
        self.b_cos = np.ascontiguousarray(self.b_cos, dtype=np.float32)
        self.b_sin = np.ascontiguousarray(self.b_sin, dtype=np.float32)
        self.amplitude = np.ascontiguousarray(self.amplitude, dtype=np.float32)
        self.saturated = np.ascontiguousarray(self.saturated, dtype=np.uint8)
        self.n_frames = np.ascontiguousarray(self.n_frames, dtype=np.uint16)
        shape = self.b_cos.shape
        if len(shape) != 3 or shape[-1] != self.freqs.size:
            raise ValueError("b_cos must be (rows, cols, K)")
        if self.b_sin.shape != shape or self.amplitude.shape != shape:
            raise ValueError("planes must share one shape")

    @property
    def shape(self):
        return self.b_cos.shape[:2]

    def coeffs(self) -> FourierCoeffs:
        """Raw (unnormalized) pairs; saturated pixels are marked invalid."""
        return FourierCoeffs(self.freqs, self.b_cos, self.b_sin, valid=self.saturated == 0)

    def as_tensor(self, normalized: bool = True) -> np.ndarray:
        """``rows x cols x 2K`` tensor, pairs interleaved per frequency."""
        c = self.coeffs()
        return (normalize(c) if normalized else c).interleaved()


def simulate_tensor(image: TransientImage, freqs=DEFAULT_FREQS, sensor: SensorConfig = SensorConfig(),
                    n_frames=2, rng_seed: int = 0, noise: bool = True) -> MeasurementTensor:
    nr, nc = image.shape
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    image.grid.harmonic_index(freqs)
    rows, cols = np.meshgrid(np.arange(nr), np.arange(nc), indexing="ij")
    keys = np.stack([rows.ravel(), cols.ravel()], axis=1)
    frames = np.broadcast_to(np.asarray(n_frames), (nr, nc)).ravel()
    flat = image.period_values().reshape(nr * nc, -1)
    bc, bs, sat = simulate_pixels(flat, image.grid, freqs, sensor, frames, rng_seed, keys, noise=noise)
    K = freqs.size
    bc, bs = bc.reshape(nr, nc, K), bs.reshape(nr, nc, K)
    return MeasurementTensor(freqs, bc, bs, 2 * np.hypot(bc, bs), sat.reshape(nr, nc),
                             frames.reshape(nr, nc), rng_seed)


def normalize(coeffs: FourierCoeffs) -> FourierCoeffs:
    """Divide every pair by its own norm; zero pairs stay zero and invalidate the pixel."""
    nrm = coeffs.norm()
    zero = nrm == 0
    safe = np.where(zero, 1.0, nrm)
    valid = coeffs.valid & ~np.any(zero, axis=-1)
    return FourierCoeffs(coeffs.freqs, np.where(zero, 0.0, coeffs.cos / safe),
                         np.where(zero, 0.0, coeffs.sin / safe), True, valid)
