import numpy as np
import pytest

from conftest import phase_of_depth, wrapped_diff
from tofrecon.core import ConfigError
from tofrecon.decode import max_peak_depth
from tofrecon.dtof import truncated_ift
from tofrecon.freqnet import (AdamState, ModelParams, TrainConfig, TrainingDiverged, TrainingSet, _forward,
                              adam_step, backward, build_training_set, extrapolate, forward, init_params, l1_loss,
                              n_params, renormalize_pairs, train)
from tofrecon.itof import SensorConfig, simulate_tensor


def _random_model(rng, hidden, depth, S):
    m = init_params(hidden, S, seed=int(rng.integers(1 << 30)), depth=depth)
    m.flat[...] = rng.normal(0, 0.7, m.flat.size)
    return m


def _kink_margin(model, x, t):
    y, _, pre = _forward(model, x)
    hidden = [np.abs(z).min() for z in pre[:-1]]
    return min(hidden + [np.abs(y - t).min()])


def _fd_grad(model, x, t, h=1e-5):
    g = np.empty_like(model.flat)
    for i in range(model.flat.size):
        old = model.flat[i]
        model.flat[i] = old + h
        up = l1_loss(forward(model, x), t)
        model.flat[i] = old - h
        dn = l1_loss(forward(model, x), t)
        model.flat[i] = old
        g[i] = (up - dn) / (2 * h)
    return g


def gradient_check(n_configs=100, seed=0):
    """Worst relative analytic-vs-finite-difference mismatch over random configurations.

    Configurations within 1e-3 of a rectifier or L1 kink are redrawn, so the
    +/-h probe never crosses one. Gradients below 1e-9 in both routes count as
    agreeing (finite-difference rounding is ~1e-11 at this step size).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        while True:
            hidden, depth, S, B = (int(rng.integers(2, 9)), int(rng.integers(1, 3)), int(rng.integers(1, 5)),
                                   int(rng.integers(1, 6)))
            model = _random_model(rng, hidden, depth, S)
            x = rng.normal(size=(B, 4))
            t = rng.normal(size=(B, 2 * S))
            if _kink_margin(model, x, t) > 1e-3:
                break
        _, ga = backward(model, x, t)
        gn = _fd_grad(model, x, t)
        scale = np.maximum(np.abs(ga), np.abs(gn))
        rel = np.where(scale > 1e-9, np.abs(ga - gn) / np.where(scale > 0, scale, 1), 0.0)
        worst = max(worst, float(rel.max()))
    return worst


# --- forward / loss ---

def test_zero_weights_give_zero_output():
    m = init_params(8, 3)
    m.flat[...] = 0
    np.testing.assert_array_equal(forward(m, np.ones((5, 4))), 0)


def test_single_layer_identity_copies_inputs():
    m = ModelParams((4, 6), np.zeros(n_params((4, 6))))
    W, b = m.layers()[0]
    W[:, :4] = np.eye(4)
    x = np.random.default_rng(0).normal(size=(7, 4))
    np.testing.assert_array_equal(forward(m, x)[:, :4], x)


def test_forward_rejects_bad_input():
    m = init_params(4, 2)
    with pytest.raises(ValueError):
        forward(m, [[0, 0, np.nan, 0]])
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 3)))


def test_forward_is_deterministic_and_batch_independent():
    m = init_params(16, 5, seed=2)
    x = np.random.default_rng(1).normal(size=(10, 4))
    full = forward(m, x)
    for i in range(10):
        np.testing.assert_allclose(forward(m, x[i]), full[i], rtol=0, atol=1e-12)


def test_l1_examples():
    assert l1_loss([0.3, -1.0], [0.3, -1.0]) == 0
    assert l1_loss([1, 2], [0, 0]) == 1.5
    with pytest.raises(ValueError):
        l1_loss([1, 2], [1, 2, 3])


def test_l1_gradient_is_sign_over_n():
    p, t, h = np.array([0.5, -2.0, 3.0, 0.1]), np.array([0.0, 1.0, 2.0, -0.4]), 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd = (l1_loss(p + e, t) - l1_loss(p - e, t)) / (2 * h)
        assert fd == pytest.approx(np.sign(p[i] - t[i]) / 4, rel=1e-6)


# --- gradients ---

def test_gradient_matches_finite_differences():
    assert gradient_check(100) <= 1e-4


def test_gradient_zero_at_perfect_fit():
    m = init_params(8, 3, seed=5)
    x = np.random.default_rng(0).normal(size=(6, 4))
    loss, g = backward(m, x, forward(m, x))
    assert loss == 0
    np.testing.assert_array_equal(g, 0)


def test_frozen_layer_has_zero_gradient():
    m = init_params(8, 3, seed=5)
    rng = np.random.default_rng(1)
    x, t = rng.normal(size=(6, 4)), rng.normal(size=(6, 6))
    _, g = backward(m, x, t)
    _, gf = backward(m, x, t, frozen=(0,))
    (W0, b0), *rest = m.layers(gf)
    assert not W0.any() and not b0.any()
    for (W, b), (Wf, bf) in zip(m.layers(g)[1:], rest):
        np.testing.assert_array_equal(W, Wf)
        np.testing.assert_array_equal(b, bf)


def test_masked_samples_never_reach_the_gradient():
    m = init_params(8, 3, seed=5)
    rng = np.random.default_rng(2)
    x, t = rng.normal(size=(9, 4)), rng.normal(size=(9, 6))
    keep = np.array([1, 0, 1, 1, 0, 0, 1, 1, 0], dtype=bool)
    t_garbage = t.copy()
    t_garbage[~keep] = 1e6
    l1, g1 = backward(m, x, t_garbage, mask=keep)
    l2, g2 = backward(m, x[keep], t[keep])
    assert l1 == l2
    np.testing.assert_array_equal(g1, g2)


# --- Adam ---

def test_adam_zero_gradient_leaves_params():
    p = np.random.default_rng(0).normal(size=20)
    before = p.copy()
    st = AdamState.zeros(20)
    for _ in range(5):
        adam_step(p, np.zeros(20), st, 1e-3, TrainConfig())
    np.testing.assert_array_equal(p, before)


def test_adam_constant_gradient_step_tends_to_lr_sign():
    cfg, lr = TrainConfig(), 1e-3
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    p, st = np.zeros(4), AdamState.zeros(4)
    for _ in range(2000):
        prev = p.copy()
        adam_step(p, g, st, lr, cfg)
    np.testing.assert_allclose(prev - p, lr * np.sign(g), rtol=1e-4)


def test_adam_is_deterministic():
    rng = np.random.default_rng(3)
    grads = rng.normal(size=(30, 12))
    outs = []
    for _ in range(2):
        p, st = np.ones(12), AdamState.zeros(12)
        for g in grads:
            adam_step(p, g, st, 1e-2, TrainConfig())
        outs.append(p)
    np.testing.assert_array_equal(*outs)


# --- training ---

def _small_set(n=400, seed=0):
    return build_training_set(n, S=5, rng_seed=seed)


def test_training_set_invariants(grid):
    ds = build_training_set(3000, grid, SensorConfig(), 20, rng_seed=4)
    assert ds.inputs.shape == (3000, 4) and ds.targets.shape == (3000, 40)
    np.testing.assert_allclose(np.hypot(ds.targets[:, 0::2], ds.targets[:, 1::2]), 1, atol=1e-12)
    ok = ds.mask
    assert ok.mean() > 0.95
    np.testing.assert_allclose(np.hypot(ds.inputs[ok, 0::2], ds.inputs[ok, 1::2]), 1, atol=1e-12)
    assert ds.frames.min() >= 1 and ds.frames.max() <= 12


def test_training_set_is_reproducible():
    a, b = _small_set(seed=9), _small_set(seed=9)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)


def test_training_is_bit_reproducible():
    ds = _small_set()
    cfg = TrainConfig(epochs=3, hidden=8, learning_rate=1e-3)
    a, b = train(ds, cfg), train(ds, cfg)
    np.testing.assert_array_equal(a.params.flat, b.params.flat)
    assert a.train_loss == b.train_loss


def test_training_ignores_out_of_range_samples():
    ds = _small_set()
    far = np.arange(len(ds)) % 5 == 0
    depth = np.where(far, ds.d_max + 1.0, ds.depth)
    t1, t2 = ds.targets.copy(), ds.targets.copy()
    t1[far], t2[far] = 50.0, -50.0
    cfg = TrainConfig(epochs=3, hidden=8, learning_rate=1e-3)
    r1 = train(TrainingSet(ds.inputs, t1, depth, ds.frames, ds.d_max), cfg)
    r2 = train(TrainingSet(ds.inputs, t2, depth, ds.frames, ds.d_max), cfg)
    np.testing.assert_array_equal(r1.params.flat, r2.params.flat)


def test_single_sample_is_memorized():
    ds = _small_set(1)
    rep = TrainingSet(np.repeat(ds.inputs, 64, 0), np.repeat(ds.targets, 64, 0), np.repeat(ds.depth, 64),
                      np.repeat(ds.frames, 64), ds.d_max)
    res = train(rep, TrainConfig(epochs=300, hidden=16, learning_rate=1e-3))
    assert res.train_loss[0] > 0.1
    assert min(res.val_loss) < 1e-3


def test_divergence_is_reported():
    ds = _small_set()
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        train(ds, TrainConfig(epochs=5, hidden=8, learning_rate=1e300))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(val_fraction=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


def test_learning_rate_schedule():
    cfg = TrainConfig(epochs=10, decay_fraction=0.5, learning_rate=1.0)
    assert [cfg.lr_at(e) for e in range(10)] == pytest.approx([1, 1, 1, 1, 1, 1.0, 0.8, 0.6, 0.4, 0.2], abs=1e-12)


def test_renormalize_pairs_unit_norm():
    out = renormalize_pairs(np.random.default_rng(0).normal(size=(50, 10)))
    np.testing.assert_allclose(np.hypot(out[:, 0::2], out[:, 1::2]), 1, atol=1e-12)


# --- trained model ---

@pytest.mark.slow
def test_standard_training_run(trained):
    assert trained.train_loss[0] > trained.train_loss[49]
    assert trained.val_loss[trained.best_epoch] == min(trained.val_loss)
    assert min(trained.val_loss) <= trained.val_loss[-1]
    assert trained.params.sizes == (4, 64, 64, 40)


@pytest.mark.slow
def test_trained_phase_per_harmonic(trained, direct_scene, grid):
    """Median phase error within 0.05 rad up to harmonic 10; beyond that, under one bin of delay."""
    tensor = simulate_tensor(direct_scene, noise=False)
    pred = extrapolate(trained.params, tensor)
    k = np.arange(1, 21)
    truth = phase_of_depth(direct_scene.gt_depth[..., None].astype(np.float64), k * grid.fundamental_freq)
    err = np.median(wrapped_diff(pred.phase(), truth).reshape(-1, 20), axis=0)
    assert np.all(err[:10] <= 0.05), err
    bins = err / (2 * np.pi * k / grid.period_bins)
    assert np.all(bins[10:] < 1.0), bins


@pytest.mark.slow
def test_trained_max_peak_within_one_bin(trained, direct_scene, grid):
    tensor = simulate_tensor(direct_scene, noise=False)
    recon = truncated_ift(extrapolate(trained.params, tensor), grid, "hamming")
    dm = max_peak_depth(recon)
    hit = np.abs(grid.depth_to_bin(dm.depth) - grid.depth_to_bin(direct_scene.gt_depth)) <= 1
    assert hit.mean() >= 0.99, hit.mean()


@pytest.mark.slow
def test_trained_output_reproduces_inputs(trained, direct_scene):
    tensor = simulate_tensor(direct_scene, noise=False)
    pred = extrapolate(trained.params, tensor).interleaved()
    x = tensor.as_tensor()
    assert np.mean(np.abs(pred[..., 0:2] - x[..., 0:2])) <= 0.05
    assert np.mean(np.abs(pred[..., 8:10] - x[..., 2:4])) <= 0.05
    np.testing.assert_allclose(np.hypot(pred[..., 0::2], pred[..., 1::2]), 1, atol=1e-9)


@pytest.mark.slow
def test_extrapolate_marks_invalid_pixels(trained, direct_scene):
    tensor = simulate_tensor(direct_scene, noise=False)
    tensor.saturated[3, 4] = 1
    tensor.b_cos[5, 6] = 0
    tensor.b_sin[5, 6] = 0
    pred = extrapolate(trained.params, tensor)
    assert not pred.valid[3, 4] and not pred.valid[5, 6]
    assert pred.valid.sum() == pred.valid.size - 2


@pytest.mark.slow
def test_extrapolate_rejects_frequency_mismatch(trained, direct_scene):
    tensor = simulate_tensor(direct_scene, freqs=(20e6, 60e6), noise=False)
    with pytest.raises(ConfigError):
        extrapolate(trained.params, tensor)
