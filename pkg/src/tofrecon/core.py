"""Shared types: the time grid, Fourier coefficient sets and error classes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

C = 299_792_458.0  # speed of light, m/s


class ConfigError(ValueError):
    """Invalid configuration (bad frequency, unknown key, unknown scene kind...)."""


class DepthRangeError(ValueError):
    """Depth outside [0, d_max) of the time grid."""


@dataclass(frozen=True)
class TimeGrid:
    bin_width: float = 50e-12
    n_bins: int = 2000
    fundamental_freq: float = 20e6

    def __post_init__(self):
        if not self.bin_width > 0 or not self.n_bins > 0 or not self.fundamental_freq > 0:
            raise ConfigError("bin_width, n_bins and fundamental_freq must be positive")
        ratio = 1.0 / (self.fundamental_freq * self.bin_width)
        if abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ConfigError(
                f"period 1/{self.fundamental_freq:g} Hz is not a multiple of bin_width {self.bin_width:g} s"
            )
        if round(ratio) > self.n_bins:
            raise ConfigError("n_bins must cover at least one fundamental period")

    @property
    def period(self) -> float:
        return 1.0 / self.fundamental_freq

    @property
    def period_bins(self) -> int:
        return int(round(1.0 / (self.fundamental_freq * self.bin_width)))

    @property
    def depth_per_bin(self) -> float:
        return self.bin_width * C / 2.0

    @property
    def d_max(self) -> float:
        return C * self.period / 2.0

    def times(self) -> np.ndarray:
        """Sample times of the bins inside one period."""
        return np.arange(self.period_bins) * self.bin_width

    def depth_to_bin(self, depth):
        """Round-trip bin index, rounding half up."""
        return np.floor(2.0 * np.asarray(depth, dtype=np.float64) / (C * self.bin_width) + 0.5).astype(np.int64)

    def bin_to_depth(self, b):
        return np.asarray(b, dtype=np.float64) * self.depth_per_bin

    def harmonic_index(self, freqs) -> np.ndarray:
        """Map frequencies (Hz) to integer harmonic numbers; raise on anything else."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
        k = np.round(freqs / self.fundamental_freq)
        if np.any(k < 1) or np.any(np.abs(freqs - k * self.fundamental_freq) > 1e-6 * self.fundamental_freq):
            raise ConfigError(f"frequencies {freqs.tolist()} are not harmonics of {self.fundamental_freq:g} Hz")
        if np.any(2 * k >= self.period_bins):
            raise ConfigError("harmonic above the Nyquist limit of the time grid")
        return k.astype(np.int64)

    def harmonics(self, n: int) -> np.ndarray:
        return self.fundamental_freq * np.arange(1, n + 1, dtype=np.float64)


@dataclass
class FourierCoeffs:
    """Brightness pairs (b_cos, b_sin) per frequency.

    ``cos`` and ``sin`` have shape ``(..., K)``; the leading dimensions index
    pixels. ``valid`` marks pixels that carry usable data.
    """

    freqs: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    normalized: bool = False
    valid: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.freqs = np.atleast_1d(np.asarray(self.freqs, dtype=np.float64))
        self.cos = np.asarray(self.cos, dtype=np.float64)
        self.sin = np.asarray(self.sin, dtype=np.float64)
        if self.cos.shape != self.sin.shape or self.cos.shape[-1] != self.freqs.size:
            raise ConfigError("cos/sin shapes must match and end with len(freqs)")
        if self.freqs.size > 1 and np.any(np.diff(self.freqs) <= 0):
            raise ConfigError("frequencies must be strictly increasing")
        if self.valid is None:
            self.valid = np.ones(self.cos.shape[:-1], dtype=bool)
        else:
            self.valid = np.broadcast_to(np.asarray(self.valid, dtype=bool), self.cos.shape[:-1]).copy()

    @property
    def shape(self):
        return self.cos.shape[:-1]

    @property
    def n_freqs(self) -> int:
        return self.freqs.size

    def phase(self) -> np.ndarray:
        return np.mod(np.arctan2(self.sin, self.cos), 2 * np.pi)

    def norm(self) -> np.ndarray:
        return np.hypot(self.cos, self.sin)

    def amplitude(self) -> np.ndarray:
        """A_w = 2 * |(b_cos, b_sin)|."""
        return 2.0 * self.norm()

    def truncate(self, n: int) -> "FourierCoeffs":
        """First ``n`` frequencies."""
        if n > self.n_freqs:
            raise ConfigError(f"asked for {n} frequencies, only {self.n_freqs} available")
        return FourierCoeffs(self.freqs[:n], self.cos[..., :n], self.sin[..., :n], self.normalized, self.valid)

    def select(self, freqs) -> "FourierCoeffs":
        """Subset by frequency value."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
        idx = []
        for f in freqs:
            hit = np.flatnonzero(np.isclose(self.freqs, f, rtol=0, atol=1e-3))
            if hit.size == 0:
                raise ConfigError(f"frequency {f:g} Hz not present")
            idx.append(int(hit[0]))
        return FourierCoeffs(self.freqs[idx], self.cos[..., idx], self.sin[..., idx], self.normalized, self.valid)

    def interleaved(self) -> np.ndarray:
        """``(..., 2K)`` layout: cos1, sin1, cos2, sin2, ..."""
        out = np.empty(self.shape + (2 * self.n_freqs,))
        out[..., 0::2] = self.cos
        out[..., 1::2] = self.sin
        return out

    @classmethod
    def from_interleaved(cls, freqs, arr, normalized=False, valid=None) -> "FourierCoeffs":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(freqs, arr[..., 0::2], arr[..., 1::2], normalized, valid)

    def __add__(self, other: "FourierCoeffs") -> "FourierCoeffs":
        if not np.array_equal(self.freqs, other.freqs):
            raise ConfigError("cannot add coefficient sets over different frequencies")
        return FourierCoeffs(self.freqs, self.cos + other.cos, self.sin + other.sin, False, self.valid & other.valid)

    def scaled(self, factor) -> "FourierCoeffs":
        f = np.asarray(factor, dtype=np.float64)[..., None]
        return FourierCoeffs(self.freqs, self.cos * f, self.sin * f, False, self.valid)

    def reshape(self, *shape) -> "FourierCoeffs":
        return FourierCoeffs(
            self.freqs,
            self.cos.reshape(*shape, self.n_freqs),
            self.sin.reshape(*shape, self.n_freqs),
            self.normalized,
            self.valid.reshape(*shape),
        )
