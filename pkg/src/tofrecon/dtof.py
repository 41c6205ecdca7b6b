"""Transient reconstruction from harmonics 1..S by a truncated inverse Fourier series."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, FourierCoeffs, TimeGrid

WINDOWS = ("none", "hamming")


def window_weights(kind: str, S: int) -> np.ndarray:
    """Per-harmonic taper for s = 1..S.

    Hamming uses the half window 0.54 + 0.46 cos(pi s / S), so the weight is
    1 at DC and 0.08 at the last harmonic.
    """
    if kind == "none":
        return np.ones(S)
    if kind == "hamming":
        s = np.arange(1, S + 1)
        return 0.54 + 0.46 * np.cos(np.pi * s / S)
    raise ConfigError(f"unknown window {kind!r}; expected one of {WINDOWS}")


@dataclass
class ReconstructedTransient:
    grid: TimeGrid
    values: np.ndarray   # (..., period_bins); may be negative (ringing)
    max_freq: float
    window: str
    valid: np.ndarray

    @property
    def S(self) -> int:
        return int(round(self.max_freq / self.grid.fundamental_freq))


def _check_harmonics(coeffs: FourierCoeffs, grid: TimeGrid) -> int:
    k = grid.harmonic_index(coeffs.freqs)
    if not np.array_equal(k, np.arange(1, k.size + 1)):
        raise ConfigError("coefficients must cover harmonics 1..S without gaps")
    return k.size


def truncated_ift(coeffs: FourierCoeffs, grid: TimeGrid, window: str = "none") -> ReconstructedTransient:
    """alpha_S(t_j) = sum_s w_s (b_cos,s cos(w_s t_j) + b_sin,s sin(w_s t_j)), no DC term."""
    S = _check_harmonics(coeffs, grid)
    P = grid.period_bins
    w = window_weights(window, S)
    spec = np.zeros(coeffs.shape + (P // 2 + 1,), dtype=np.complex128)
    spec[..., 1:S + 1] = w * (coeffs.cos - 1j * coeffs.sin)
    # irfft computes (1/P)(X0 + 2 sum Re X_s e^{i w_s t})
    values = np.fft.irfft(spec, n=P, axis=-1) * (P / 2.0)
    return ReconstructedTransient(grid, values, S * grid.fundamental_freq, window, coeffs.valid.copy())


def build_reference_table(freqs, grid: TimeGrid) -> np.ndarray:
    """Rows: candidate time bins; columns: cos(w_s t), sin(w_s t) interleaved per frequency."""
    k = grid.harmonic_index(freqs)
    arg = 2 * np.pi * np.outer(np.arange(grid.period_bins), k) / grid.period_bins
    table = np.empty((grid.period_bins, 2 * k.size))
    table[:, 0::2] = np.cos(arg)
    table[:, 1::2] = np.sin(arg)
    return table


def ncc_curve(coeffs: FourierCoeffs, table: np.ndarray):
    """Normalized correlation of each observed 2S-vector against every table row.

    Returns (curve, valid); ``curve`` has shape (..., period_bins) with values
    in [-1, 1]. Zero observations are flagged invalid and give a zero curve.
    """
    obs = coeffs.interleaved()
    if obs.shape[-1] != table.shape[1]:
        raise ConfigError("coefficients do not match the reference table frequencies")
    onorm = np.linalg.norm(obs, axis=-1, keepdims=True)
    rnorm = np.linalg.norm(table, axis=1)
    valid = coeffs.valid & (onorm[..., 0] > 0)
    safe = np.where(onorm > 0, onorm, 1.0)
    curve = (obs / safe) @ table.T / rnorm
    curve = np.where(valid[..., None], curve, 0.0)
    return curve, valid
