"""Rule-based depth decoders: phasor lookup, peak pickers, cross-talk correction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .core import ConfigError, FourierCoeffs, TimeGrid
from .dtof import ReconstructedTransient, build_reference_table
from .itof import normalize

DECODERS = ("phasor", "max", "first", "second", "blended", "xtalk")
PEAK_FLOOR = 0.1


@dataclass
class DepthMap:
    depth: np.ndarray   # metres; NaN where invalid
    valid: np.ndarray
    decoder: str

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.depth)
        self.depth = np.where(self.valid, self.depth, np.nan)

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class PeakSet:
    """Up to two peaks per pixel, in time order; missing entries have bin -1."""

    bins: np.ndarray     # (..., 2) int
    heights: np.ndarray  # (..., 2) float, NaN when missing
    count: np.ndarray    # (...,) int


def phasor_decode(coeffs: FourierCoeffs, grid: TimeGrid) -> DepthMap:
    """Multi-frequency phase-consistency lookup over every bin of one period."""
    if coeffs.n_freqs < 2:
        raise ConfigError("phasor decoding needs at least two frequencies")
    unit = normalize(coeffs)
    table = build_reference_table(unit.freqs, grid)
    score = unit.interleaved() @ table.T
    b = np.argmax(score, axis=-1)
    return DepthMap(grid.bin_to_depth(b), unit.valid, "phasor")


def find_peaks(recon: ReconstructedTransient, floor_frac: float = PEAK_FLOOR) -> PeakSet:
    """Circular local maxima at least max(2*median, floor_frac*max) high; keep the largest two."""
    v = recon.values
    left, right = np.roll(v, 1, axis=-1), np.roll(v, -1, axis=-1)
    # a two-sample flat top (symmetric paths) counts once, at its left sample
    is_peak = (v > left) & ((v > right) | ((v == right) & (right > np.roll(v, -2, axis=-1))))
    thr = np.maximum(2 * np.median(v, axis=-1), floor_frac * np.max(v, axis=-1))
    keep = is_peak & (v >= thr[..., None]) & recon.valid[..., None]
    h = np.where(keep, v, -np.inf)
    top = np.argpartition(-h, 1, axis=-1)[..., :2]
    th = np.take_along_axis(h, top, axis=-1)
    present = np.isfinite(th)
    bins = np.where(present, top, -1)
    heights = np.where(present, th, np.nan)
    # time order, missing peaks last
    key = np.where(present, bins, np.iinfo(np.int64).max)
    order = np.argsort(key, axis=-1, kind="stable")
    return PeakSet(np.take_along_axis(bins, order, -1), np.take_along_axis(heights, order, -1),
                   present.sum(axis=-1))


def max_peak_depth(recon: ReconstructedTransient) -> DepthMap:
    v = recon.values
    b = np.argmax(v, axis=-1)
    ok = recon.valid & (np.max(v, axis=-1) > np.min(v, axis=-1))
    return DepthMap(recon.grid.bin_to_depth(b), ok, "max")


def first_peak_depth(recon: ReconstructedTransient, floor_frac: float = PEAK_FLOOR) -> DepthMap:
    pk = find_peaks(recon, floor_frac)
    return DepthMap(recon.grid.bin_to_depth(pk.bins[..., 0]), pk.count >= 1, "first")


def second_peak_depth(recon: ReconstructedTransient, floor_frac: float = PEAK_FLOOR) -> DepthMap:
    pk = find_peaks(recon, floor_frac)
    return DepthMap(recon.grid.bin_to_depth(pk.bins[..., 1]), pk.count >= 2, "second")


def blended_peak_depth(recon: ReconstructedTransient, floor_frac: float = PEAK_FLOOR) -> DepthMap:
    """Height-weighted mean of the first and second peak depths."""
    pk = find_peaks(recon, floor_frac)
    d = recon.grid.bin_to_depth(pk.bins)
    h = np.where(pk.count[..., None] >= np.array([1, 2]), pk.heights, 0.0)
    h = np.clip(h, 0.0, None)
    tot = h.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        blend = np.nansum(np.where(h > 0, h * d, 0.0), axis=-1) / tot
    single = (pk.count >= 1) & ~(tot > 0)
    blend = np.where(single, d[..., 0], blend)
    return DepthMap(blend, pk.count >= 1, "blended")


def blend_depths(d1, h1, d2, h2):
    """(h1 d1 + h2 d2) / (h1 + h2)."""
    return (h1 * d1 + h2 * d2) / (h1 + h2)


def median_filter_3x3(dm: DepthMap, region=None) -> DepthMap:
    """3x3 median over valid neighbours (lower median for even counts).

    With ``region`` given, only pixels inside it are updated and only pixels
    inside it contribute to windows.
    """
    if dm.depth.ndim != 2:
        raise ValueError("median filter needs a 2-D depth map")
    member = dm.valid if region is None else (dm.valid & region)
    src = np.where(member, dm.depth, np.nan)
    pad = np.pad(src, 1, constant_values=np.nan)
    H, W = src.shape
    win = np.stack([pad[i:i + H, j:j + W] for i in range(3) for j in range(3)], axis=-1)
    win = np.sort(win, axis=-1)  # NaNs last
    n = np.sum(np.isfinite(win), axis=-1)
    idx = np.clip((n - 1) // 2, 0, 8)
    med = np.take_along_axis(win, idx[..., None], -1)[..., 0]
    target = member & (n > 0)
    out = np.where(target, med, dm.depth)
    return DepthMap(out, dm.valid, dm.decoder)


def contrast_ratio(amplitude: np.ndarray, blur_size: int = 5) -> np.ndarray:
    """|A - blur(A)| / A with a box blur."""
    a = np.asarray(amplitude, dtype=np.float64)
    blurred = uniform_filter(a, size=blur_size, mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, np.abs(a - blurred) / a, 0.0)


def crosstalk_masks(recon: ReconstructedTransient, amplitude, blur_size=5, contrast_thresh=0.5,
                    floor_frac=0.02):
    """(high-contrast mask, has-second-peak mask, second-peak depth map)."""
    a = np.asarray(amplitude, dtype=np.float64)
    if not np.any(a > 0):
        raise ValueError("amplitude image has no valid pixels")
    high = contrast_ratio(a, blur_size) > contrast_thresh
    second = second_peak_depth(recon, floor_frac)
    return high, second.valid, second


def crosstalk_correct(max_map: DepthMap, recon: ReconstructedTransient, amplitude, blur_size: int = 5,
                      contrast_thresh: float = 0.5, floor_frac: float = 0.02) -> DepthMap:
    """Swap in second-peak depths on high-contrast pixels that have a second peak, then median-filter them."""
    high, has2, second = crosstalk_masks(recon, amplitude, blur_size, contrast_thresh, floor_frac)
    swap = high & has2
    depth = np.where(swap, second.depth, max_map.depth)
    valid = np.where(swap, True, max_map.valid)
    fixed = median_filter_3x3(DepthMap(depth, valid, "xtalk"), region=swap)
    return DepthMap(np.where(swap, fixed.depth, max_map.depth), valid, "xtalk")


def decode_reconstruction(decoder: str, recon: ReconstructedTransient, amplitude=None,
                          floor_frac: float = PEAK_FLOOR) -> DepthMap:
    """Apply one of the waveform decoders by name; ``xtalk`` needs an amplitude image."""
    if decoder == "max":
        return max_peak_depth(recon)
    if decoder == "first":
        return first_peak_depth(recon, floor_frac)
    if decoder == "second":
        return second_peak_depth(recon, floor_frac)
    if decoder == "blended":
        return blended_peak_depth(recon, floor_frac)
    if decoder == "xtalk":
        if amplitude is None:
            raise ConfigError("decoder 'xtalk' needs an amplitude image")
        return crosstalk_correct(max_peak_depth(recon), recon, amplitude)
    raise ConfigError(f"unknown waveform decoder {decoder!r}; expected one of {DECODERS[1:]}")
