"""The CNN-LSTM forecaster: configuration, parameters, forward and backward passes.

Pipeline for one window of shape ``(W, F)``::

    Conv1D(256, k=2, ReLU) -> Conv1D(128, k=2, ReLU) -> Flatten -> RepeatVector(W)
    -> LSTM(100) -> Dropout(0.2) -> LSTM(100) x (depth - 1)
    -> BiLSTM(128, last state, concat) -> Dense(100, ReLU) -> Dense(1, linear)

Parameter order (used by checkpoints and the optimizer) is the order of
``ParamSet.layers``: conv1, conv2, ..., lstm1, ..., bilstm, dense1, dense2.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, ConsistencyError, DimensionError, DivergenceError
from .tensor import Rng, uniform_init

# Layer rows as printed in the source table; two rows cannot be reproduced by any
# wiring consistent with the described data path and are reported, not asserted.
PUBLISHED_TABLE = (
    ("conv1", "Conv1D(filters=256)", 768, True),
    ("conv2", "Conv1D(filters=128)", 65664, True),
    ("lstm1", "LSTM (units=100)", 756800, False),
    ("lstm2", "LSTM (units=100)", 80400, True),
    ("lstm3", "LSTM (units=100)", 80400, True),
    ("lstm4", "LSTM (units=100)", 80400, True),
    ("bilstm", "Bidirectional LSTM", 235520, False),
    ("dense1", "Dense (units=100)", 25700, True),
    ("dense2", "Dense (units=1)", 101, True),
)


@dataclass(frozen=True)
class ModelConfig:
    window: int = 30
    features: int = 1
    conv_filters: tuple[int, ...] = (256, 128)
    kernel: int = 2
    lstm_units: int = 100
    lstm_depth: int = 4
    dropout_rate: float = 0.2
    bilstm_units: int = 128
    dense_units: int = 100
    output_units: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        extents = dict(
            window=self.window,
            features=self.features,
            kernel=self.kernel,
            lstm_units=self.lstm_units,
            lstm_depth=self.lstm_depth,
            bilstm_units=self.bilstm_units,
            dense_units=self.dense_units,
            output_units=self.output_units,
        )
        for name, value in extents.items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise ConfigError(f"conv_filters must be non-empty and positive, got {self.conv_filters}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.kernel > self.window:
            raise ConfigError(f"kernel {self.kernel} exceeds window {self.window}")
        if self.conv_steps < 1:
            raise ConfigError(
                f"{len(self.conv_filters)} convolutions of kernel {self.kernel} leave nothing of window {self.window}"
            )
        if self.output_units != 1:
            raise ConfigError("only a single next-step output is supported")

    @property
    def conv_steps(self) -> int:
        """Sequence length after the convolution stack (valid padding)."""
        return self.window - len(self.conv_filters) * (self.kernel - 1)

    @property
    def flat_dim(self) -> int:
        return self.conv_steps * self.conv_filters[-1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ParamSet:
    """All trainable tensors of one model, grouped by layer in a fixed order."""

    config: ModelConfig
    layers: dict = field(default_factory=dict)

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for layer_id, p in self.layers.items():
            for name, arr in p.tensors().items():
                out[f"{layer_id}.{name}"] = arr
        return out

    def with_tensors(self, named: dict) -> "ParamSet":
        """Same layout, tensors taken from ``named`` (as produced by :meth:`named_tensors`)."""
        new = {}
        for layer_id, p in self.layers.items():
            new[layer_id] = _rebuild(p, {k: named[f"{layer_id}.{k}"] for k in p.tensors()})
        return ParamSet(self.config, new)

    def map(self, fn) -> "ParamSet":
        return ParamSet(self.config, {k: p.map(fn) for k, p in self.layers.items()})

    @property
    def count(self) -> int:
        return sum(p.count for p in self.layers.values())


def _rebuild(p, named):
    if isinstance(p, L.BiLSTMParams):
        fwd = {k[4:]: v for k, v in named.items() if k.startswith("fwd.")}
        bwd = {k[4:]: v for k, v in named.items() if k.startswith("bwd.")}
        return L.BiLSTMParams(L.LSTMParams(**fwd), L.LSTMParams(**bwd))
    return type(p)(**named)


def layer_ids(config: ModelConfig) -> list[str]:
    ids = [f"conv{i + 1}" for i in range(len(config.conv_filters))]
    ids += [f"lstm{i + 1}" for i in range(config.lstm_depth)]
    return ids + ["bilstm", "dense1", "dense2"]


def _init_lstm(rng, units, in_dim):
    W = uniform_init(rng, (4 * units, in_dim), math.sqrt(1.0 / in_dim))
    U = uniform_init(rng, (4 * units, units), math.sqrt(1.0 / units))
    b = np.zeros(4 * units)
    b[units : 2 * units] = 1.0  # forget gate starts open
    return L.LSTMParams(W, U, b)


def build(config: ModelConfig, rng: Rng | None = None) -> ParamSet:
    """Initialise every layer: weights uniform in +-sqrt(1/fan_in), biases 0, forget bias 1."""
    rng = Rng(config.seed) if rng is None else rng
    layers = {}
    c_in = config.features
    for i, n_filters in enumerate(config.conv_filters):
        fan_in = config.kernel * c_in
        kernels = uniform_init(rng, (n_filters, config.kernel, c_in), math.sqrt(1.0 / fan_in))
        layers[f"conv{i + 1}"] = L.Conv1DParams(kernels, np.zeros(n_filters))
        c_in = n_filters
    in_dim = config.flat_dim
    for i in range(config.lstm_depth):
        layers[f"lstm{i + 1}"] = _init_lstm(rng, config.lstm_units, in_dim)
        in_dim = config.lstm_units
    layers["bilstm"] = L.BiLSTMParams(
        _init_lstm(rng, config.bilstm_units, in_dim), _init_lstm(rng, config.bilstm_units, in_dim)
    )
    in_dim = 2 * config.bilstm_units
    for layer_id, out_dim in (("dense1", config.dense_units), ("dense2", config.output_units)):
        W = uniform_init(rng, (out_dim, in_dim), math.sqrt(1.0 / in_dim))
        layers[layer_id] = L.DenseParams(W, np.zeros(out_dim))
        in_dim = out_dim
    return ParamSet(config, layers)


def zeros_like(params: ParamSet) -> ParamSet:
    return params.map(np.zeros_like)


# ------------------------------------------------------------------------ counting


def count_params(params: ParamSet) -> list[tuple[str, str, int]]:
    """``(layer id, label, count)`` per layer in ParamSet order."""
    cfg = params.config
    rows = []
    for layer_id, p in params.layers.items():
        if layer_id.startswith("conv"):
            label = f"Conv1D(filters={p.kernels.shape[0]})"
        elif layer_id.startswith("lstm"):
            label = f"LSTM (units={p.units})"
        elif layer_id == "bilstm":
            label = "Bidirectional LSTM"
        else:
            label = f"Dense (units={p.weights.shape[0]})"
        rows.append((layer_id, label, p.count))
    if cfg == ModelConfig(seed=cfg.seed):
        counts = {layer_id: n for layer_id, _, n in rows}
        for layer_id, _, published, consistent in PUBLISHED_TABLE:
            if consistent and counts[layer_id] != published:
                raise ConsistencyError(f"{layer_id} has {counts[layer_id]} parameters, expected {published}")
    return rows


def expected_counts(config: ModelConfig) -> dict[str, int]:
    """Closed-form per-layer parameter counts for ``config``."""
    out = {}
    c_in = config.features
    for i, n_filters in enumerate(config.conv_filters):
        out[f"conv{i + 1}"] = L.conv1d_param_count(n_filters, config.kernel, c_in)
        c_in = n_filters
    in_dim = config.flat_dim
    for i in range(config.lstm_depth):
        out[f"lstm{i + 1}"] = L.lstm_param_count(config.lstm_units, in_dim)
        in_dim = config.lstm_units
    out["bilstm"] = 2 * L.lstm_param_count(config.bilstm_units, in_dim)
    out["dense1"] = L.dense_param_count(config.dense_units, 2 * config.bilstm_units)
    out["dense2"] = L.dense_param_count(config.output_units, config.dense_units)
    return out


def layer_table_report(config: ModelConfig | None = None) -> list[dict]:
    """Compare computed counts against the published layer table.

    Rows flagged ``consistent=False`` cannot be matched by the described data
    path; ``implied`` explains what the published figure would require.
    """
    config = config or ModelConfig()
    counts = expected_counts(config)
    report = []
    for layer_id, label, published, consistent in PUBLISHED_TABLE:
        computed = counts.get(layer_id)
        row = dict(layer=layer_id, label=label, published=published, computed=computed, consistent=consistent)
        row["match"] = computed == published
        if layer_id == "lstm1":
            u = config.lstm_units
            row["implied"] = f"per-step input width {published // (4 * u) - u - 1} (flattened conv output is {config.flat_dim})"
        elif layer_id == "bilstm":
            u = config.bilstm_units
            row["implied"] = f"{published - counts['bilstm']} extra parameters over 2 x LSTM({u}) on a {config.lstm_units}-wide input"
        report.append(row)
    return report


# ------------------------------------------------------------------ forward/backward


@dataclass
class ForwardCache:
    params: ParamSet
    mode: str
    unbatched: bool
    conv_inputs: list
    conv_out: np.ndarray
    flat: np.ndarray
    lstm_inputs: list
    lstm_caches: list
    dropout_mask: np.ndarray | None
    bilstm_input: np.ndarray
    bilstm_cache: L.BiLSTMCache
    dense_inputs: list
    prediction: np.ndarray


def _finite(arr, layer_id):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite activation in layer {layer_id}")
    return arr


def forward(params: ParamSet, window, mode: str = "eval", rng: Rng | None = None):
    """Predict the next normalized value for one window ``(W, F)`` or a batch ``(B, W, F)``.

    Returns ``(prediction, cache)``; the prediction is a float for a single window
    and a ``(B,)`` array for a batch.
    """
    cfg = params.config
    x = np.asarray(window, dtype=np.float64)
    unbatched = x.ndim == 2
    if unbatched:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.features):
        raise DimensionError(f"expected window shape ({cfg.window}, {cfg.features}), got {np.shape(window)}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    conv_inputs = []
    h = x
    for i in range(len(cfg.conv_filters)):
        conv_inputs.append(h)
        h = _finite(L.conv1d_forward(h, params.layers[f"conv{i + 1}"]), f"conv{i + 1}")
    conv_out = h
    flat = L.flatten(h)

    lstm_inputs, lstm_caches, mask = [], [], None
    h, c = L.lstm_forward_repeated_cached(flat, params.layers["lstm1"], cfg.window)
    lstm_inputs.append(flat)
    lstm_caches.append(c)
    _finite(h, "lstm1")
    h, mask = L.dropout(h, cfg.dropout_rate, mode, rng)
    for i in range(2, cfg.lstm_depth + 1):
        lstm_inputs.append(h)
        h, c = L.lstm_forward_cached(h, params.layers[f"lstm{i}"])
        lstm_caches.append(c)
        _finite(h, f"lstm{i}")

    bilstm_input = h
    h, bi_cache = L.bilstm_forward_cached(h, params.layers["bilstm"])
    _finite(h, "bilstm")
    dense_inputs = [h]
    h = _finite(L.dense_forward(h, params.layers["dense1"], "relu"), "dense1")
    dense_inputs.append(h)
    out = _finite(L.dense_forward(h, params.layers["dense2"], "linear"), "dense2")[:, 0]

    cache = ForwardCache(
        params, mode, unbatched, conv_inputs, conv_out, flat, lstm_inputs, lstm_caches,
        mask, bilstm_input, bi_cache, dense_inputs, out,
    )
    return (float(out[0]) if unbatched else out), cache


def predict(params: ParamSet, windows, batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions for ``(N, W, F)`` windows, in chunks."""
    windows = np.asarray(windows, dtype=np.float64)
    out = [forward(params, windows[i : i + batch_size])[0] for i in range(0, len(windows), batch_size)]
    return np.concatenate(out) if out else np.empty(0)


def backward(params: ParamSet, cache: ForwardCache, loss_grad) -> ParamSet:
    """Gradients of a loss w.r.t. every parameter, given dLoss/dPrediction.

    ``loss_grad`` has the shape of the prediction returned by :func:`forward`.
    """
    if cache.params is not params:
        raise ConsistencyError("forward cache was produced with a different parameter set")
    cfg = params.config
    g_out = np.asarray(loss_grad, dtype=np.float64).reshape(-1)
    if g_out.shape != cache.prediction.shape:
        raise DimensionError(f"loss gradient shape {np.shape(loss_grad)} does not match prediction")
    grads = {}

    g = L.dense_backward(cache.dense_inputs[1], params.layers["dense2"], "linear", g_out[:, None])
    grads["dense2"] = g.params
    g = L.dense_backward(cache.dense_inputs[0], params.layers["dense1"], "relu", g.input)
    grads["dense1"] = g.params
    g = L.bilstm_backward(cache.bilstm_input, params.layers["bilstm"], cache.bilstm_cache, g.input)
    grads["bilstm"] = g.params
    upstream = g.input
    for i in range(cfg.lstm_depth, 1, -1):
        g = L.lstm_backward(cache.lstm_inputs[i - 1], params.layers[f"lstm{i}"], cache.lstm_caches[i - 1], upstream)
        grads[f"lstm{i}"] = g.params
        upstream = g.input
    upstream = L.dropout_backward(upstream, cache.dropout_mask)
    g = L.lstm_backward_repeated(cache.flat, params.layers["lstm1"], cache.lstm_caches[0], upstream)
    grads["lstm1"] = g.params
    upstream = L.unflatten(g.input, cfg.conv_steps, cfg.conv_filters[-1])
    for i in range(len(cfg.conv_filters), 0, -1):
        g = L.conv1d_backward(cache.conv_inputs[i - 1], params.layers[f"conv{i}"], upstream)
        grads[f"conv{i}"] = g.params
        upstream = g.input

    return ParamSet(cfg, {k: grads[k] for k in params.layers})
