"""Undercomplete SELU autoencoder with hand-written backpropagation and Adam.

The network is trained to reconstruct its own inputs through a bottleneck
narrower than the input. Observations far from what the network learned to
reproduce get large reconstruction errors. The signed per-dimension error
(observed minus reconstructed) shows how much each observation deviates in
each dimension and in which direction.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(B, n)`` propagates as ``X @ W + b``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Hashable

import numpy as np

from granular.data import Dataset
from granular.errors import ConfigError, DataError, NumericError

logger = logging.getLogger(__name__)

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Presets for the two reference topologies, keyed by input width.
TOPOLOGY_PRESETS = {5: (4, 3), 11: (7, 8)}


def hidden_widths(input_dim: int, encoding_dim: int, hidden_layers: int) -> list[int]:
    """Widths of the hidden layers, symmetric about the bottleneck.

    The encoder half steps linearly from ``input_dim`` down to ``encoding_dim``
    (rounded up, so no layer is narrower than the bottleneck). With an odd
    count the bottleneck is the single middle layer; with an even count it is
    the middle pair.
    """
    half = math.ceil(hidden_layers / 2)
    encoder = [
        math.ceil(input_dim + (encoding_dim - input_dim) * i / half - 1e-9)
        for i in range(1, half + 1)
    ]
    encoder[-1] = encoding_dim
    mirror = encoder[:-1] if hidden_layers % 2 else encoder
    return encoder + mirror[::-1]


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    encoding_dim: int
    hidden_layers: int
    learning_rate: float = 9.5e-3
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    patience: int = 20
    min_delta: float = 1e-6

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.encoding_dim < 1:
            raise ConfigError("layer widths must be positive")
        if self.encoding_dim >= self.input_dim:
            raise ConfigError(
                f"encoding_dim ({self.encoding_dim}) must be smaller than "
                f"input_dim ({self.input_dim}) for an undercomplete autoencoder"
            )
        if self.hidden_layers < 1:
            raise ConfigError("hidden_layers must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def layer_widths(self) -> list[int]:
        return [
            self.input_dim,
            *hidden_widths(self.input_dim, self.encoding_dim, self.hidden_layers),
            self.input_dim,
        ]

    @classmethod
    def for_dimension(cls, input_dim: int, **overrides) -> NetworkConfig:
        """Default topology for ``input_dim`` inputs.

        5 and 11 inputs use the reference settings (bottleneck 4 with 3 hidden
        layers, bottleneck 7 with 8 hidden layers). Other widths compress to
        roughly 65% with 3 hidden layers up to 5 inputs and 8 beyond.
        """
        if input_dim < 2:
            raise ConfigError("an undercomplete autoencoder needs at least 2 inputs")
        if input_dim in TOPOLOGY_PRESETS:
            m, h = TOPOLOGY_PRESETS[input_dim]
        else:
            m = min(input_dim - 1, max(1, math.ceil(0.65 * input_dim)))
            h = 3 if input_dim <= 5 else 8
        kwargs = {"encoding_dim": m, "hidden_layers": h}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(input_dim=input_dim, **kwargs)


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> NetworkParams:
        half = len(arrays) // 2
        return cls(tuple(arrays[:half]), tuple(arrays[half:]))

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }


def build_network(config: NetworkConfig, rng: np.random.Generator | None = None) -> NetworkParams:
    """Gaussian weights with variance 1/fan_in, zero biases."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])
    widths = config.layer_widths
    if min(widths) < 1:
        raise ConfigError(f"zero-width layer in {widths}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return NetworkParams(tuple(weights), tuple(biases))


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = SELU_LAMBDA * np.where(x > 0, x, neg)
    return out.item() if out.ndim == 0 else out


def selu_grad(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass
class ForwardCache:
    params: NetworkParams
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer


def _forward(params: NetworkParams, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    a = X
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ W + b
        preacts.append(z)
        a = z if i == last else selu(z)
    return a, ForwardCache(params, inputs, preacts)


def forward(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Reconstruct ``x`` (a vector or a batch of rows). The output layer is linear."""
    x = np.asarray(x, dtype=np.float64)
    n = params.weights[0].shape[0]
    if x.shape[-1] != n or x.ndim not in (1, 2):
        raise DataError(f"dimension mismatch: expected {n} inputs, got shape {x.shape}")
    X = x[None, :] if x.ndim == 1 else x
    r, cache = _forward(params, X)
    return (r[0] if x.ndim == 1 else r), cache


def loss_mse(x: np.ndarray, r: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {r.shape}")
    return float(np.mean((x - r) ** 2))


def _backward(params: NetworkParams, cache: ForwardCache, X: np.ndarray, R: np.ndarray):
    # d(mean over all B*n squared errors)/dR
    delta = 2.0 * (R - X) / X.size
    L = len(params.weights)
    gw: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    for i in range(L - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * selu_grad(cache.preacts[i - 1])
    return NetworkParams(tuple(gw), tuple(gb))


def backward(params: NetworkParams, cache: ForwardCache, x: np.ndarray) -> NetworkParams:
    """Exact gradient of the mean squared reconstruction error of ``x``.

    ``cache`` must come from ``forward(params, x)``; for a batch the loss is
    the mean over every row and dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    X = x[None, :] if x.ndim == 1 else x
    if cache.params is not params or cache.inputs[0].shape != X.shape or not np.array_equal(
        cache.inputs[0], X
    ):
        raise ValueError("stale cache: forward() was not run on these params and inputs")
    R = cache.preacts[-1]
    return _backward(params, cache, X, R)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: NetworkParams,
    grads: NetworkParams,
    state: AdamState,
    t: int,
    lr: float,
) -> tuple[NetworkParams, AdamState]:
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    g_arrays = grads.arrays()
    for i, g in enumerate(g_arrays):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter array {i} at step {t}")
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), g_arrays, state.m, state.v):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        p = p - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return NetworkParams.from_arrays(new_p), AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class TrainResult:
    params: NetworkParams
    losses: tuple[float, ...]
    config: NetworkConfig
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train(data: Dataset | np.ndarray, config: NetworkConfig) -> TrainResult:
    """Mini-batch Adam on the mean squared reconstruction error.

    Each epoch visits every row once in a seeded shuffled order. Training
    stops after ``config.epochs`` or once the epoch loss has failed to improve
    on its best value by ``config.min_delta`` for ``config.patience`` epochs.
    """
    X = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if d != config.input_dim:
        raise DataError(f"dimension mismatch: data has {d} columns, network expects {config.input_dim}")
    batch = config.batch_size
    if n < batch:
        logger.warning("batch_size %d exceeds %d rows; using full batches", batch, n)
        batch = n
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = build_network(config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    state = AdamState.zeros_like(params)

    losses: list[float] = []
    best = math.inf
    stale = 0
    t = 0
    stopped = False
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            Xb = X[order[start : start + batch]]
            R, cache = _forward(params, Xb)
            total += float(np.sum((R - Xb) ** 2)) / d
            grads = _backward(params, cache, Xb, R)
            t += 1
            try:
                params, state = adam_step(params, grads, state, t, config.learning_rate)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from None
        loss = total / n
        if not math.isfinite(loss):
            raise NumericError(f"training diverged at epoch {epoch}: loss is {loss}")
        losses.append(loss)
        if best - loss >= config.min_delta:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                stopped = True
                logger.debug("early stop at epoch %d, loss %.3g", epoch, loss)
                break
    return TrainResult(params, tuple(losses), config, stopped)


@dataclass(frozen=True)
class ReconstructionReport:
    """Aggregate score and signed per-dimension deviations for one observation.

    ``deviations`` is observed minus reconstructed, so a positive entry means
    the observation sits above what the network expects for that dimension.
    """

    id: Hashable
    score: float
    deviations: np.ndarray = field(repr=False)

    def ranked_dimensions(self) -> np.ndarray:
        """Dimension indices by descending |deviation|; ties keep column order."""
        return np.argsort(-np.abs(self.deviations), kind="stable")


def reconstruct_all(params: NetworkParams, data: Dataset) -> list[ReconstructionReport]:
    if data.d != params.weights[0].shape[0]:
        raise DataError(
            f"dimension mismatch: data has {data.d} columns, network expects "
            f"{params.weights[0].shape[0]}"
        )
    R, _ = _forward(params, data.values)
    dev = data.values - R
    if not np.all(np.isfinite(dev)):
        raise NumericError("non-finite reconstruction")
    scores = np.mean(dev**2, axis=1)
    return [
        ReconstructionReport(id_, float(s), row.copy())
        for id_, s, row in zip(data.ids, scores, dev)
    ]


def fit_score(data: Dataset, config: NetworkConfig | None = None) -> tuple[TrainResult, list[ReconstructionReport]]:
    """Train on ``data`` and score that same data (transductive use)."""
    if config is None:
        config = NetworkConfig.for_dimension(data.d)
    elif config.input_dim != data.d:
        config = replace(config, input_dim=data.d)
    result = train(data, config)
    return result, reconstruct_all(result.params, data)
