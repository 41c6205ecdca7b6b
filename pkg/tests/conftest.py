import numpy as np
import pytest

from tofrecon.core import C, TimeGrid


@pytest.fixture(scope="session")
def grid():
    return TimeGrid()


def direct_sum_coeffs(values, grid, n):
    """Reference Fourier coefficients by explicit cosine/sine sums (no FFT)."""
    v = np.asarray(values, dtype=np.float64)[..., :grid.period_bins]
    t = np.arange(grid.period_bins) * grid.bin_width
    w = 2 * np.pi * grid.fundamental_freq * np.arange(1, n + 1)
    arg = np.outer(t, w)
    return v @ np.cos(arg) * grid.bin_width, v @ np.sin(arg) * grid.bin_width


def phase_of_depth(depth, freq):
    """Round-trip phase 2 w d / c wrapped to [0, 2 pi)."""
    return np.mod(2 * (2 * np.pi * freq) * np.asarray(depth) / C, 2 * np.pi)


def wrapped_diff(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


@pytest.fixture(scope="session")
def standard_set(grid):
    """The standard synthetic training set: 50k procedural pixels, 1-12 averaged frames."""
    from tofrecon.freqnet import build_training_set
    from tofrecon.itof import SensorConfig
    return build_training_set(50000, grid, SensorConfig(), 20, rng_seed=1)


@pytest.fixture(scope="session")
def trained(standard_set):
    """Default-configuration training run on the standard set (a few minutes)."""
    import time
    from tofrecon.freqnet import TrainConfig, train
    t0 = time.perf_counter()
    res = train(standard_set, TrainConfig())
    res.elapsed = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def direct_scene(grid):
    """64x64 noise-free scene of direct-only pixels over the training depth range."""
    from tofrecon.transient import SceneSpec, scene_generate
    spec = SceneSpec("random_mix", 64, 64, rng_seed=11,
                     params={"mix_direct": 1.0, "mix_two_path": 0.0, "mix_diffuse": 0.0})
    return scene_generate(spec, grid)
