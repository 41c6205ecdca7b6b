"""Per-pixel MLP that extrapolates two measured frequencies to harmonics 1..S.

Inputs are the unit-normalized (b_cos, b_sin) pairs at the input
frequencies; outputs are S raw (cos, sin) pairs that get re-normalized
before reconstruction. Trained with an L1 loss and Adam, gradients by hand.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ConfigError, FourierCoeffs, TimeGrid
from .itof import DEFAULT_FREQS, MeasurementTensor, SensorConfig, normalize, simulate_pixels
from .transient import fourier_coefficients, sample_pixels

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelParams:
    """Layer sizes plus one flat float64 parameter vector (W1, b1, W2, b2, ...)."""

    sizes: tuple
    flat: np.ndarray
    input_freqs: tuple = DEFAULT_FREQS
    fundamental_freq: float = 20e6
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        self.input_freqs = tuple(float(f) for f in self.input_freqs)
        if self.flat.size != n_params(self.sizes):
            raise ValueError(f"expected {n_params(self.sizes)} parameters, got {self.flat.size}")
        if self.sizes[0] != 2 * len(self.input_freqs) or self.sizes[-1] % 2:
            raise ValueError("layer sizes do not match the input/output pair layout")

    @property
    def S(self) -> int:
        return self.sizes[-1] // 2

    def layers(self, vec: np.ndarray | None = None):
        """[(W, b), ...] as views into ``vec`` (default: the parameters)."""
        return _views(self.sizes, self.flat if vec is None else vec)


def n_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _views(sizes, vec):
    out, i = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = vec[i:i + a * b].reshape(a, b)
        i += a * b
        out.append((W, vec[i:i + b]))
        i += b
    return out


def init_params(hidden: int = 64, S: int = 20, seed: int = 0, input_freqs=DEFAULT_FREQS,
                fundamental_freq: float = 20e6, depth: int = 2) -> ModelParams:
    """He-normal weights, zero biases."""
    sizes = (2 * len(input_freqs),) + (hidden,) * depth + (2 * S,)
    rng = np.random.default_rng(seed)
    flat = np.zeros(n_params(sizes))
    model = ModelParams(sizes, flat, tuple(input_freqs), fundamental_freq)
    for W, _ in model.layers():
        W[...] = rng.standard_normal(W.shape) * math.sqrt(2.0 / W.shape[0])
    return model


def _forward(params: ModelParams, x: np.ndarray):
    acts, pre = [x], []
    layers = params.layers()
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        acts.append(h)
    return h, acts, pre


def forward(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"input must have {params.sizes[0]} features")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return _forward(params, x.reshape(-1, params.sizes[0]))[0].reshape(x.shape[:-1] + (params.sizes[-1],))


def l1_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("pred and target shapes differ")
    return float(np.mean(np.abs(pred - target)))


def backward(params: ModelParams, x, target, mask=None, frozen=()):
    """Loss and flat gradient of ``l1_loss(forward(x), target)``.

    ``mask`` (per sample) drops samples entirely; ``frozen`` lists layer
    indices whose gradients are zeroed.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        x, target = x[keep], target[keep]
    grad = np.zeros_like(params.flat)
    if x.shape[0] == 0:
        return 0.0, grad
    y, acts, pre = _forward(params, x)
    diff = y - target
    loss = float(np.mean(np.abs(diff)))
    delta = np.sign(diff) / diff.size
    gl = params.layers(grad)
    layers = params.layers()
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = gl[i]
        if i not in frozen:
            np.matmul(acts[i].T, delta, out=gW)
            gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * (pre[i - 1] > 0)
    return loss, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 600
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0
    val_fraction: float = 0.1
    decay_fraction: float = 0.7  # trailing share of epochs with linearly decaying rate
    hidden: int = 64

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.epochs > 0 and self.hidden > 0):
            raise ConfigError("train.learning_rate, batch_size, epochs and hidden must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("train.val_fraction must be in (0, 1)")
        if not 0 <= self.decay_fraction <= 1:
            raise ConfigError("train.decay_fraction must be in [0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Constant rate, then a linear ramp towards zero over the last ``decay_fraction`` of epochs."""
        n_decay = int(round(self.decay_fraction * self.epochs))
        start = self.epochs - n_decay
        if epoch < start or n_decay == 0:
            return self.learning_rate
        return self.learning_rate * (1.0 - (epoch - start) / n_decay)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float, config: TrainConfig):
    """In-place bias-corrected Adam update of a flat parameter vector."""
    state.t += 1
    state.m *= config.beta1
    state.m += (1 - config.beta1) * grads
    state.v *= config.beta2
    state.v += (1 - config.beta2) * grads * grads
    mhat_scale = 1.0 / (1 - config.beta1 ** state.t)
    vhat_scale = 1.0 / (1 - config.beta2 ** state.t)
    params -= lr * (state.m * mhat_scale) / (np.sqrt(state.v * vhat_scale) + config.eps)
    return params, state


@dataclass
class TrainingSet:
    inputs: np.ndarray    # (N, 2K) normalized input pairs
    targets: np.ndarray   # (N, 2S) normalized ground-truth pairs
    depth: np.ndarray     # (N,) ground-truth depth, metres
    frames: np.ndarray    # (N,) averaged frame count
    d_max: float
    input_freqs: tuple = DEFAULT_FREQS
    fundamental_freq: float = 20e6

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth < self.d_max)

    def __len__(self):
        return self.inputs.shape[0]


def build_training_set(n: int, grid: TimeGrid = TimeGrid(), sensor: SensorConfig = SensorConfig(), S: int = 20,
                       rng_seed: int = 0, mix=(0.4, 0.3, 0.3), frames=(1, 12), input_freqs=DEFAULT_FREQS,
                       chunk: int = 4096, **ranges) -> TrainingSet:
    """Procedural pixels -> (noisy normalized inputs, normalized harmonic targets)."""
    if n < 1:
        raise ConfigError("training set must be non-empty")
    ss = np.random.SeedSequence(rng_seed)
    scene_ss, frame_ss, noise_ss = ss.spawn(3)
    scene_rng = np.random.default_rng(scene_ss)
    frame_count = np.random.default_rng(frame_ss).integers(frames[0], frames[1] + 1, n)
    noise_seed = int(noise_ss.generate_state(1)[0])
    ins, tgs, dep = [], [], []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        batch = sample_pixels(scene_rng, m, grid, mix=mix, **ranges)
        keys = np.stack([np.arange(start, start + m), np.zeros(m, dtype=np.int64)], axis=1)
        bc, bs, sat = simulate_pixels(batch.values, grid, input_freqs, sensor, frame_count[start:start + m],
                                      noise_seed, keys)
        meas = normalize(FourierCoeffs(input_freqs, bc, bs, valid=sat == 0))
        tgt = normalize(fourier_coefficients(batch.values, grid, S))
        depth = np.where(meas.valid & tgt.valid, batch.gt_depth, np.inf)
        ins.append(meas.interleaved())
        tgs.append(tgt.interleaved())
        dep.append(depth)
    return TrainingSet(np.concatenate(ins), np.concatenate(tgs), np.concatenate(dep), frame_count,
                       grid.d_max, tuple(input_freqs), grid.fundamental_freq)


@dataclass
class TrainResult:
    params: ModelParams
    train_loss: list
    val_loss: list
    best_epoch: int


def train(data: TrainingSet, config: TrainConfig = TrainConfig(), params: ModelParams | None = None) -> TrainResult:
    """Mini-batch Adam on the L1 loss; returns the lowest-validation-loss checkpoint.

    Samples at or beyond d_max (or otherwise invalid) never reach a gradient.
    """
    keep = np.flatnonzero(data.mask)
    if keep.size < 2:
        raise ConfigError("training set has fewer than two usable samples")
    S = data.targets.shape[1] // 2
    if params is None:
        params = init_params(config.hidden, S, config.rng_seed, data.input_freqs, data.fundamental_freq)
    params = ModelParams(params.sizes, params.flat.copy(), params.input_freqs, params.fundamental_freq,
                         {**asdict(config), "n_samples": int(len(data))})
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 1]))
    order = rng.permutation(keep)
    n_val = max(1, int(round(config.val_fraction * order.size)))
    val_idx, tr_idx = np.sort(order[:n_val]), order[n_val:]
    if tr_idx.size == 0:
        tr_idx = val_idx
    xv, tv = data.inputs[val_idx], data.targets[val_idx]
    state = AdamState.zeros(params.flat.size)
    best = (math.inf, params.flat.copy(), -1)
    hist_tr, hist_val = [], []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = tr_idx[rng.permutation(tr_idx.size)]
        tot, cnt = 0.0, 0
        for s in range(0, perm.size, config.batch_size):
            b = perm[s:s + config.batch_size]
            loss, g = backward(params, data.inputs[b], data.targets[b])
            adam_step(params.flat, g, state, lr, config)
            tot += loss * b.size
            cnt += b.size
        tr_loss = tot / cnt
        val = l1_loss(forward(params, xv), tv)
        if not (math.isfinite(tr_loss) and math.isfinite(val)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: train={tr_loss}, val={val}")
        hist_tr.append(tr_loss)
        hist_val.append(val)
        if val <= best[0]:
            best = (val, params.flat.copy(), epoch)
        log.debug("epoch %d lr %.2e train %.5f val %.5f", epoch, lr, tr_loss, val)
    params.flat[...] = best[1]
    return TrainResult(params, hist_tr, hist_val, best[2])


def renormalize_pairs(out: np.ndarray) -> np.ndarray:
    c = FourierCoeffs.from_interleaved(np.arange(1, out.shape[-1] // 2 + 1), out)
    return normalize(c).interleaved()


def extrapolate(model: ModelParams, tensor: MeasurementTensor) -> FourierCoeffs:
    """Predicted unit-norm harmonics 1..S for every pixel of ``tensor``."""
    if len(tensor.freqs) != len(model.input_freqs) or not np.allclose(tensor.freqs, model.input_freqs):
        raise ConfigError(f"model expects input frequencies {model.input_freqs}, tensor has {tensor.freqs.tolist()}")
    return extrapolate_coeffs(model, tensor.coeffs())


def extrapolate_coeffs(model: ModelParams, coeffs: FourierCoeffs) -> FourierCoeffs:
    unit = normalize(coeffs)
    x = np.where(unit.valid[..., None], unit.interleaved(), 0.0)
    out = forward(model, x)
    freqs = model.fundamental_freq * np.arange(1, model.S + 1)
    pred = normalize(FourierCoeffs.from_interleaved(freqs, out))
    return FourierCoeffs(freqs, pred.cos, pred.sin, True, unit.valid & pred.valid)
