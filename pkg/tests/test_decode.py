import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tofrecon.core import ConfigError, FourierCoeffs, TimeGrid
from tofrecon.decode import (
    DepthMap, blend_depths, blended_peak_depth, contrast_ratio, crosstalk_correct, crosstalk_masks,
    decode_reconstruction, find_peaks, first_peak_depth, max_peak_depth, median_filter_3x3, phasor_decode,
    second_peak_depth,
)
from tofrecon.dtof import ReconstructedTransient, build_reference_table, ncc_curve, truncated_ift
from tofrecon.itof import simulate_tensor
from tofrecon.transient import (
    SceneSpec, ground_truth_fourier, make_diffuse_mpi, make_direct, make_two_path, scene_generate,
)

DUAL = [20e6, 100e6]


def _dual(pixel_or_values, grid=None):
    return ground_truth_fourier(pixel_or_values, 5, grid).select(DUAL)


def _wave(values, grid):
    v = np.asarray(values, dtype=np.float64)
    return ReconstructedTransient(grid, v, 0.0, "none", np.ones(v.shape[:-1], dtype=bool))


def test_phasor_beyond_short_wrap(grid):
    dm = phasor_decode(_dual(make_direct(3.2, 1.0, grid)), grid)
    assert abs(dm.depth - 3.2) <= grid.depth_per_bin / 2
    assert phasor_decode(_dual(make_direct(0.0, 1.0, grid)), grid).depth == 0.0


def test_phasor_exact_on_every_bin(grid):
    vals = np.eye(grid.period_bins)
    dm = phasor_decode(_dual(vals, grid), grid)
    np.testing.assert_array_equal(grid.depth_to_bin(dm.depth), np.arange(grid.period_bins))


def test_phasor_is_biased_by_diffuse_mpi(grid):
    dm = phasor_decode(_dual(make_diffuse_mpi(1.0, 1.0, 0.05, 2e8, grid)), grid)
    assert dm.depth - grid.bin_to_depth(133) > grid.depth_per_bin


def test_phasor_needs_two_frequencies(grid):
    with pytest.raises(ConfigError):
        phasor_decode(ground_truth_fourier(make_direct(1.0, 1.0, grid), 1), grid)


def test_phasor_masks_dead_pixels(grid):
    c = FourierCoeffs(DUAL, np.zeros((2, 2)), np.zeros((2, 2)))
    dm = phasor_decode(c, grid)
    assert not dm.valid.any() and np.isnan(dm.depth).all()


def test_find_peaks_examples(grid):
    one = find_peaks(truncated_ift(ground_truth_fourier(make_direct(1.5, 1.0, grid), 20), grid, "hamming"))
    assert one.count == 1 and one.bins.tolist() == [200, -1]
    two = find_peaks(truncated_ift(ground_truth_fourier(make_two_path(1.0, 0.8, 2.0, 0.3, grid), 20), grid,
                                   "hamming"))
    assert two.count == 2
    assert abs(two.bins[0] - 133) <= 1 and abs(two.bins[1] - 267) <= 1
    assert two.heights[0] > two.heights[1] > 0
    flat = find_peaks(_wave(np.zeros(grid.period_bins), grid))
    assert flat.count == 0 and flat.bins.tolist() == [-1, -1]


def test_find_peaks_plateau_and_wraparound(grid):
    v = np.zeros(grid.period_bins)
    v[[10, 11]] = 5.0   # two-sample flat top
    v[0] = 3.0          # circular neighbour of the last bin
    pk = find_peaks(_wave(v, grid))
    assert pk.bins.tolist() == [0, 10] and pk.count == 2
    v[[10, 11, 12]] = 5.0  # wider plateaus are not peaks
    assert find_peaks(_wave(v, grid)).bins.tolist() == [0, -1]


def test_find_peaks_threshold_rule(grid):
    v = np.zeros(grid.period_bins)
    v[100], v[300], v[500] = 1.0, 0.09, 0.5
    pk = find_peaks(_wave(v, grid))
    assert pk.bins.tolist() == [100, 500]
    pk = find_peaks(_wave(v, grid), floor_frac=0.05)
    assert pk.bins.tolist() == [100, 500]  # still only the two largest
    v2 = np.full(grid.period_bins, 1.0)
    v2[200], v2[400] = 1.9, 2.5
    assert find_peaks(_wave(v2, grid)).bins.tolist() == [400, -1]  # 1.9 < 2 x median


def test_direct_pixels_max_and_first_agree(grid):
    vals = np.zeros((50, grid.period_bins))
    b = np.random.default_rng(0).integers(0, grid.period_bins, 50)
    vals[np.arange(50), b] = 1.0
    r = truncated_ift(ground_truth_fourier(vals, 20, grid), grid, "hamming")
    np.testing.assert_array_equal(grid.depth_to_bin(max_peak_depth(r).depth), b)
    np.testing.assert_array_equal(grid.depth_to_bin(first_peak_depth(r).depth), b)
    assert not second_peak_depth(r).valid.any()
    np.testing.assert_array_equal(grid.depth_to_bin(blended_peak_depth(r).depth), b)


def test_decoder_agreement_on_direct_pixels(grid):
    rng = np.random.default_rng(1)
    d = rng.uniform(0, 7.4, 300)
    vals = np.zeros((300, grid.period_bins))
    vals[np.arange(300), grid.depth_to_bin(d)] = rng.uniform(0.1, 2.0, 300)
    c = ground_truth_fourier(vals, 20, grid)
    ph = grid.depth_to_bin(phasor_decode(c.select(DUAL), grid).depth)
    mx = grid.depth_to_bin(max_peak_depth(truncated_ift(c, grid)).depth)
    ncc = np.argmax(ncc_curve(c, build_reference_table(c.freqs, grid))[0], -1)
    assert np.abs(ph - mx).max() <= 1 and np.abs(ncc - mx).max() <= 1


def test_specular_decoder_swap(grid):
    r = truncated_ift(ground_truth_fourier(make_two_path(1.0, 0.4, 2.5, 1.0, grid), 20), grid, "hamming")
    assert abs(max_peak_depth(r).depth - 2.5) <= grid.depth_per_bin
    assert abs(first_peak_depth(r).depth - 1.0) <= grid.depth_per_bin


def test_second_peak_recovers_background_behind_leak(grid):
    # bright foreground leak at 1 m in front of the true 3 m background
    p = make_two_path(1.0, 3.0, 3.0, 1.0, grid)
    r = truncated_ift(ground_truth_fourier(p, 20), grid, "hamming")
    assert abs(max_peak_depth(r).depth - 1.0) <= grid.depth_per_bin
    assert abs(grid.depth_to_bin(second_peak_depth(r, 0.02).depth) - grid.depth_to_bin(3.0)) <= 1


def test_blend_examples(grid):
    assert blend_depths(1.0, 2.0, 2.0, 2.0) == 1.5
    assert blend_depths(1.0, 1.0, 2.0, 0.0) == 1.0
    assert blend_depths(1.0, 1.0, 2.0, 3.0) == 1.75
    r = truncated_ift(ground_truth_fourier(make_two_path(1.0, 0.8, 2.0, 0.3, grid), 20), grid, "hamming")
    pk = find_peaks(r)
    d = grid.bin_to_depth(pk.bins)
    expect = blend_depths(d[0], pk.heights[0], d[1], pk.heights[1])
    assert blended_peak_depth(r).depth == pytest.approx(expect)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_decoders_scale_invariant(lam, seed):
    grid = TimeGrid()
    rng = np.random.default_rng(seed)
    vals = np.zeros((4, grid.period_bins))
    vals[np.arange(4), rng.integers(0, 900, 4)] = 1.0
    vals[np.arange(4), rng.integers(0, 900, 4)] += rng.uniform(0.1, 2.0, 4)
    c = ground_truth_fourier(vals, 20, grid)
    for dec in (lambda x: phasor_decode(x.select(DUAL), grid),
                lambda x: max_peak_depth(truncated_ift(x, grid)),
                lambda x: first_peak_depth(truncated_ift(x, grid, "hamming"))):
        a, b = dec(c), dec(c.scaled(np.full(4, lam)))
        np.testing.assert_array_equal(a.valid, b.valid)
        np.testing.assert_array_equal(grid.depth_to_bin(np.nan_to_num(a.depth)),
                                      grid.depth_to_bin(np.nan_to_num(b.depth)))


def brute_lower_median(depth, valid):
    H, W = depth.shape
    out = depth.copy()
    for i in range(H):
        for j in range(W):
            if not valid[i, j]:
                continue
            win = sorted(depth[a, b] for a in range(max(0, i - 1), min(H, i + 2))
                         for b in range(max(0, j - 1), min(W, j + 2)) if valid[a, b])
            out[i, j] = win[(len(win) - 1) // 2]
    return out


def test_median_filter_examples():
    const = DepthMap(np.full((5, 5), 2.0), np.ones((5, 5), bool), "max")
    np.testing.assert_array_equal(median_filter_3x3(const).depth, const.depth)
    spike = const.depth.copy()
    spike[2, 2] = 9.0
    assert median_filter_3x3(DepthMap(spike, np.ones((5, 5), bool), "max")).depth[2, 2] == 2.0
    cb = np.where((np.add.outer(np.arange(6), np.arange(6)) % 2) == 0, 1.0, 3.0)
    out = median_filter_3x3(DepthMap(cb, np.ones((6, 6), bool), "max")).depth
    # interior windows hold 5 of the centre's value and 4 of the other
    np.testing.assert_array_equal(out[1:-1, 1:-1], cb[1:-1, 1:-1])
    np.testing.assert_array_equal(out, brute_lower_median(cb, np.ones((6, 6), bool)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_median_filter_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0, 5, (7, 6))
    v = rng.uniform(size=(7, 6)) > 0.3
    out = median_filter_3x3(DepthMap(d, v, "max"))
    np.testing.assert_array_equal(np.nan_to_num(out.depth), np.nan_to_num(brute_lower_median(np.where(v, d, np.nan), v)))
    assert np.array_equal(out.valid, v)


def test_crosstalk_uniform_amplitude_is_identity(grid):
    img = scene_generate(SceneSpec("two_path_grid", rows=8, cols=8), grid)
    r = truncated_ift(ground_truth_fourier(img, 20), grid, "hamming")
    mx = max_peak_depth(r)
    out = crosstalk_correct(mx, r, np.ones((8, 8)))
    np.testing.assert_array_equal(out.depth, mx.depth)
    assert not contrast_ratio(np.ones((8, 8))).any()
    with pytest.raises(ValueError):
        crosstalk_correct(mx, r, np.zeros((8, 8)))


@pytest.fixture(scope="module")
def contrast_scene(grid):
    # at S=20 the bright leak's kernel skirt pulls the weak background peak by up to 3 bins; S=30 resolves it
    img = scene_generate(SceneSpec("high_contrast", rows=32, cols=32, rng_seed=3), grid)
    r = truncated_ift(ground_truth_fourier(img, 30), grid, "hamming")
    amp = simulate_tensor(img, rng_seed=1).amplitude[..., 0]
    return img, r, amp


def test_crosstalk_fixes_background_next_to_patch(grid, contrast_scene):
    img, r, amp = contrast_scene
    mx = max_peak_depth(r)
    out = crosstalk_correct(mx, r, amp)
    leak = img.gt_kind == 2
    assert np.all(np.abs(mx.depth[leak] - img.gt_depth[leak]) > 1.0)  # max peak follows the leak
    assert np.all(np.abs(grid.depth_to_bin(out.depth[leak]) - grid.depth_to_bin(img.gt_depth[leak])) <= 1)
    fg = img.gt_depth < 2
    np.testing.assert_array_equal(out.depth[fg], mx.depth[fg])


def test_crosstalk_only_touches_masked_pixels(grid, contrast_scene):
    img, r, amp = contrast_scene
    rng = np.random.default_rng(0)
    for _ in range(5):
        mx = DepthMap(rng.uniform(0, 7, img.shape), rng.uniform(size=img.shape) > 0.1, "max")
        high, has2, _ = crosstalk_masks(r, amp)
        out = crosstalk_correct(mx, r, amp)
        outside = ~(high & has2)
        np.testing.assert_array_equal(np.nan_to_num(out.depth[outside], nan=-1), np.nan_to_num(mx.depth[outside], nan=-1))


def test_decode_reconstruction_dispatch(grid, contrast_scene):
    img, r, amp = contrast_scene
    np.testing.assert_array_equal(decode_reconstruction("max", r).depth, max_peak_depth(r).depth)
    with pytest.raises(ConfigError):
        decode_reconstruction("xtalk", r)
    with pytest.raises(ConfigError):
        decode_reconstruction("median", r)
    assert decode_reconstruction("xtalk", r, amp).decoder == "xtalk"
