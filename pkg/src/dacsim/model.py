"""Small differentiable classifier exchanged and merged by the protocols.

Softmax regression (``hidden_dim == 0``) or a one-hidden-layer ReLU MLP,
stored as one flat float64 parameter vector so models can be averaged
coordinate-wise. Forward, cross-entropy loss, analytic gradients and the
Adam update are written out by hand; no autodiff framework is involved.

Parameter packing order: W1 (input_dim x hidden_dim), b1, W2
(hidden_dim x n_classes), b2 — or just W (input_dim x n_classes), b when
there is no hidden layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datagen import ClientShard, Dataset
from .errors import ConfigurationError, TrainingError


@dataclass(frozen=True)
class Arch:
    input_dim: int
    hidden_dim: int
    n_classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.n_classes < 2 or self.hidden_dim < 0:
            raise ConfigurationError(f"invalid architecture {self}")

    @property
    def n_params(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.n_classes
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True)
class ModelParams:
    arch: Arch
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.arch.n_params,):
            raise ValueError(
                f"parameter vector has length {self.values.shape}, "
                f"arch {self.arch} requires {self.arch.n_params}"
            )


@dataclass(frozen=True)
class OptimizerState:
    """Adam moments plus hyperparameters; one instance per client, never shared."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_optimizer(arch: Arch, learning_rate: float) -> OptimizerState:
    n = arch.n_params
    return OptimizerState(np.zeros(n), np.zeros(n), 0, learning_rate)


def init_params(arch: Arch, rng_seed: int) -> ModelParams:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = np.random.default_rng(rng_seed)
    d, h, c = arch.input_dim, arch.hidden_dim, arch.n_classes
    values = np.zeros(arch.n_params)
    if h == 0:
        bound = 1.0 / np.sqrt(d)
        values[: d * c] = rng.uniform(-bound, bound, d * c)
    else:
        bound1 = 1.0 / np.sqrt(d)
        bound2 = 1.0 / np.sqrt(h)
        values[: d * h] = rng.uniform(-bound1, bound1, d * h)
        off = d * h + h
        values[off : off + h * c] = rng.uniform(-bound2, bound2, h * c)
    return ModelParams(arch, values)


def _unpack(params: ModelParams):
    d, h, c = params.arch.input_dim, params.arch.hidden_dim, params.arch.n_classes
    v = params.values
    if h == 0:
        return v[: d * c].reshape(d, c), v[d * c :]
    w1 = v[: d * h].reshape(d, h)
    b1 = v[d * h : d * h + h]
    off = d * h + h
    w2 = v[off : off + h * c].reshape(h, c)
    b2 = v[off + h * c :]
    return w1, b1, w2, b2


def _logits(params: ModelParams, x: np.ndarray):
    """Batch logits plus the hidden pre-activations needed for backprop."""
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature dim {x.shape[1]} != model input dim {params.arch.input_dim}"
        )
    if params.arch.hidden_dim == 0:
        w, b = _unpack(params)
        return x @ w + b, None
    w1, b1, w2, b2 = _unpack(params)
    z1 = x @ w1 + b1
    hidden = np.maximum(z1, 0.0)
    return hidden @ w2 + b2, (z1, hidden)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probability vector for one sample (positive, sums to 1)."""
    logits, _ = _logits(params, np.asarray(features, dtype=np.float64).reshape(1, -1))
    return np.exp(_log_softmax(logits))[0]


def predict_proba(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (n, n_classes)."""
    logits, _ = _logits(params, features)
    return np.exp(_log_softmax(logits))


def _mean_cross_entropy(params: ModelParams, data: Dataset) -> float:
    logits, _ = _logits(params, data.features)
    log_p = _log_softmax(logits)
    return float(-log_p[np.arange(len(data)), data.labels].mean())


def loss_and_grad(params: ModelParams, batch: Dataset) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradient."""
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be non-empty")
    x, y = batch.features, batch.labels
    logits, cache = _logits(params, x)
    log_p = _log_softmax(logits)
    loss = float(-log_p[np.arange(n), y].mean())

    dlogits = np.exp(log_p)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grad = np.empty_like(params.values)
    d, h, c = params.arch.input_dim, params.arch.hidden_dim, params.arch.n_classes
    if h == 0:
        grad[: d * c] = (x.T @ dlogits).ravel()
        grad[d * c :] = dlogits.sum(axis=0)
    else:
        z1, hidden = cache
        _, _, w2, _ = _unpack(params)
        dhidden = dlogits @ w2.T
        dz1 = dhidden * (z1 > 0.0)
        grad[: d * h] = (x.T @ dz1).ravel()
        grad[d * h : d * h + h] = dz1.sum(axis=0)
        off = d * h + h
        grad[off : off + h * c] = (hidden.T @ dlogits).ravel()
        grad[off + h * c :] = dlogits.sum(axis=0)
    return loss, grad


def dataset_loss(params: ModelParams, dataset: Dataset) -> float:
    """Mean cross-entropy over the full dataset, no parameter updates."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    return _mean_cross_entropy(params, dataset)


def adam_step(
    params: ModelParams, grad: np.ndarray, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One bias-corrected Adam update."""
    if grad.shape != params.values.shape:
        raise ValueError("gradient length does not match parameter vector")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient encountered")
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * grad * grad
    t = state.step_count + 1
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    values = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return ModelParams(params.arch, values), new_state


def train_local(
    params: ModelParams,
    shard: ClientShard,
    epochs: int,
    batch_size: int,
    state: OptimizerState,
    rng: np.random.Generator,
) -> tuple[ModelParams, OptimizerState]:
    """Run ``epochs`` passes of shuffled mini-batch Adam over ``shard.train``.

    The last batch of an epoch may be smaller than ``batch_size``; every
    sample is used once per epoch.
    """
    if epochs < 1 or batch_size < 1:
        raise ConfigurationError("epochs and batch_size must be >= 1")
    n = len(shard.train)
    if n == 0:
        raise ConfigurationError(f"client {shard.client_id} has an empty train set")
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = shard.train.subset(order[start : start + batch_size])
            _, grad = loss_and_grad(params, batch)
            params, state = adam_step(params, grad, state)
    return params, state


def evaluate(params: ModelParams, dataset: Dataset) -> tuple[float, float]:
    """(accuracy, mean loss); argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    logits, _ = _logits(params, dataset.features)
    log_p = _log_softmax(logits)
    predictions = log_p.argmax(axis=1)
    accuracy = float((predictions == dataset.labels).mean())
    loss = float(-log_p[np.arange(len(dataset)), dataset.labels].mean())
    return accuracy, loss
