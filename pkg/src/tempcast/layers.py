"""Forward and backward passes for the layers of the CNN-LSTM stack.

Every function accepts arbitrary leading batch axes: a conv input may be
``(T, C)`` or ``(B, T, C)``, an LSTM input ``(T, D)`` or ``(B, T, D)`` and so on.
Parameter gradients are summed over the batch axes.

LSTM weights are stored gate-stacked in the order input, forget, cell, output:
``W`` is ``(4u, D)``, ``U`` is ``(4u, u)`` and ``b`` is ``(4u,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConsistencyError, DimensionError, ParameterError
from .tensor import Rng, relu

GATES = ("input", "forget", "cell", "output")


class _Params:
    """Shared helpers for the parameter dataclasses below."""

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def count(self) -> int:
        return sum(int(a.size) for a in self.tensors().values())

    def map(self, fn):
        return type(self)(**{k: fn(v) for k, v in self.tensors().items()})


@dataclass
class Conv1DParams(_Params):
    kernels: np.ndarray  # filters x kernel_size x in_channels
    bias: np.ndarray  # filters

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[1]


@dataclass
class DenseParams(_Params):
    weights: np.ndarray  # out x in
    bias: np.ndarray  # out


@dataclass
class LSTMParams(_Params):
    W: np.ndarray  # 4u x in_dim
    U: np.ndarray  # 4u x u
    b: np.ndarray  # 4u

    @property
    def units(self) -> int:
        return self.U.shape[1]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str):
        """``(W_g, U_g, b_g)`` views for one gate."""
        k = GATES.index(name)
        u = self.units
        sl = slice(k * u, (k + 1) * u)
        return self.W[sl], self.U[sl], self.b[sl]


@dataclass
class BiLSTMParams(_Params):
    fwd: LSTMParams
    bwd: LSTMParams

    def tensors(self):
        out = {}
        for side in ("fwd", "bwd"):
            for k, v in getattr(self, side).tensors().items():
                out[f"{side}.{k}"] = v
        return out

    def map(self, fn):
        return BiLSTMParams(self.fwd.map(fn), self.bwd.map(fn))


@dataclass
class LayerGradients:
    """Parameter gradients (same type and shapes as the parameters) plus the input gradient."""

    params: _Params
    input: np.ndarray


def conv1d_param_count(filters, kernel_size, in_channels):
    return filters * (kernel_size * in_channels + 1)


def lstm_param_count(units, in_dim):
    return 4 * units * (in_dim + units + 1)


def dense_param_count(out_dim, in_dim):
    return out_dim * (in_dim + 1)


# --------------------------------------------------------------------------- conv


def _conv_preact(x, p: Conv1DParams):
    x = np.asarray(x, dtype=np.float64)
    n_filters, k, c_in = p.kernels.shape
    if x.ndim < 2 or x.shape[-1] != c_in:
        raise DimensionError(f"conv1d expects (..., T, {c_in}) input, got {x.shape}")
    t_out = x.shape[-2] - k + 1
    if t_out < 1:
        raise DimensionError(f"conv1d sequence length {x.shape[-2]} is shorter than kernel {k}")
    z = np.broadcast_to(p.bias, x.shape[:-2] + (t_out, n_filters)).copy()
    for j in range(k):
        z += x[..., j : j + t_out, :] @ p.kernels[:, j, :].T
    return z


def conv1d_forward(x, p: Conv1DParams) -> np.ndarray:
    """Valid-padding, stride-1 convolution followed by ReLU."""
    return relu(_conv_preact(x, p))


def conv1d_backward(x, p: Conv1DParams, upstream) -> LayerGradients:
    x = np.asarray(x, dtype=np.float64)
    z = _conv_preact(x, p)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != z.shape:
        raise DimensionError(f"conv1d upstream shape {upstream.shape} != output shape {z.shape}")
    dz = np.where(z > 0.0, upstream, 0.0)
    n_filters, k, c_in = p.kernels.shape
    t_out = z.shape[-2]
    dz2 = dz.reshape(-1, n_filters)
    dk = np.empty_like(p.kernels)
    dx = np.zeros_like(x)
    for j in range(k):
        xs = x[..., j : j + t_out, :]
        dk[:, j, :] = dz2.T @ xs.reshape(-1, c_in)
        dx[..., j : j + t_out, :] += dz @ p.kernels[:, j, :]
    return LayerGradients(Conv1DParams(dk, dz2.sum(axis=0)), dx)


# ------------------------------------------------------------------ reshape layers


def flatten(x) -> np.ndarray:
    """Row-major flatten of the last two axes."""
    x = np.asarray(x)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def unflatten(v, steps: int, channels: int) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != steps * channels:
        raise DimensionError(f"cannot unflatten {v.shape[-1]} values into {steps} x {channels}")
    return v.reshape(v.shape[:-1] + (steps, channels))


def repeat_vector(v, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"repeat count must be >= 1, got {n}")
    v = np.asarray(v, dtype=np.float64)
    return np.repeat(v[..., None, :], n, axis=-2)


def repeat_vector_backward(upstream) -> np.ndarray:
    return np.asarray(upstream).sum(axis=-2)


# --------------------------------------------------------------------------- LSTM

# tanh(a * z) * a + s turns one tanh into sigmoid for i, f, o and tanh for g
_SCALE = {}


def _gate_affine(units):
    if units not in _SCALE:
        a = np.full(4 * units, 0.5)
        a[2 * units : 3 * units] = 1.0
        s = np.full(4 * units, 0.5)
        s[2 * units : 3 * units] = 0.0
        _SCALE[units] = (a, s)
    return _SCALE[units]


@dataclass
class LSTMCache:
    gates: np.ndarray  # N x T x 4u, post-activation [i, f, g, o]
    c: np.ndarray  # N x (T+1) x u, c[:, 0] = c0 = 0
    h: np.ndarray  # N x (T+1) x u, h[:, 0] = h0 = 0
    tanh_c: np.ndarray  # N x T x u
    batch_shape: tuple
    steps: int
    in_dim: int
    repeated: bool = False


def _lstm_run(xw, p: LSTMParams, steps: int):
    """Recurrence over a precomputed input projection ``xw`` of shape (N, T or 1, 4u)."""
    n = xw.shape[0]
    u = p.units
    a, s = _gate_affine(u)
    UT = p.U.T
    gates = np.empty((n, steps, 4 * u))
    c = np.zeros((n, steps + 1, u))
    h = np.zeros((n, steps + 1, u))
    tanh_c = np.empty((n, steps, u))
    const = xw.shape[1] == 1
    for t in range(steps):
        z = xw[:, 0 if const else t] + h[:, t] @ UT
        gt = np.tanh(z * a) * a + s
        gates[:, t] = gt
        c[:, t + 1] = gt[:, u : 2 * u] * c[:, t] + gt[:, :u] * gt[:, 2 * u : 3 * u]
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = gt[:, 3 * u :] * tanh_c[:, t]
    return gates, c, h, tanh_c


def _check_lstm_input(x, p: LSTMParams):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != p.in_dim:
        raise DimensionError(f"lstm expects (..., T, {p.in_dim}) input, got {x.shape}")
    if x.shape[-2] < 1:
        raise DimensionError("lstm input sequence is empty")
    return x


def _lstm_output(cache: LSTMCache, return_sequences: bool):
    h = cache.h[:, 1:] if return_sequences else cache.h[:, -1]
    return h.reshape(cache.batch_shape + h.shape[1:])


def lstm_forward_cached(x, p: LSTMParams, return_sequences: bool = True):
    """Like :func:`lstm_forward` but also returns the cache needed by :func:`lstm_backward`."""
    x = _check_lstm_input(x, p)
    batch_shape = x.shape[:-2]
    steps, d = x.shape[-2:]
    x2 = x.reshape(-1, steps, d)
    xw = x2 @ p.W.T + p.b
    gates, c, h, tanh_c = _lstm_run(xw, p, steps)
    cache = LSTMCache(gates, c, h, tanh_c, batch_shape, steps, d)
    return _lstm_output(cache, return_sequences), cache


def lstm_forward(x, p: LSTMParams, return_sequences: bool = True) -> np.ndarray:
    """Standard forget-gate LSTM from zero initial state.

    Returns every hidden state ``(..., T, u)`` or only the last one ``(..., u)``.
    """
    return lstm_forward_cached(x, p, return_sequences)[0]


def lstm_forward_repeated_cached(v, p: LSTMParams, steps: int, return_sequences: bool = True):
    """LSTM over ``repeat_vector(v, steps)`` without materialising the repeated input.

    The input projection is computed once instead of ``steps`` times, which is
    what makes the full-size model (3,584-wide repeated input) trainable.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim < 1 or v.shape[-1] != p.in_dim:
        raise DimensionError(f"lstm expects (..., {p.in_dim}) repeated vector, got {v.shape}")
    if steps < 1:
        raise ParameterError(f"repeat count must be >= 1, got {steps}")
    batch_shape = v.shape[:-1]
    v2 = v.reshape(-1, 1, v.shape[-1])
    xw = v2 @ p.W.T + p.b
    gates, c, h, tanh_c = _lstm_run(xw, p, steps)
    cache = LSTMCache(gates, c, h, tanh_c, batch_shape, steps, v.shape[-1], repeated=True)
    return _lstm_output(cache, return_sequences), cache


def _lstm_core_backward(cache: LSTMCache, p: LSTMParams, dh_out):
    """BPTT through the recurrence; returns dZ (N, T, 4u) and dU."""
    u = p.units
    n, steps = cache.gates.shape[:2]
    g = cache.gates
    gi, gf, gg, go = g[..., :u], g[..., u : 2 * u], g[..., 2 * u : 3 * u], g[..., 3 * u :]
    c_prev = cache.c[:, :-1]
    tc = cache.tanh_c
    # pre-activation derivatives, arranged so that dz_t = [dc, dc, dc, dh] * coef_t
    coef = np.concatenate(
        [gg * gi * (1 - gi), c_prev * gf * (1 - gf), gi * (1 - gg**2), tc * go * (1 - go)],
        axis=-1,
    )
    dc_from_h = go * (1 - tc**2)
    dz = np.empty((n, steps, 4 * u))
    dh_next = np.zeros((n, u))
    dc_next = np.zeros((n, u))
    for t in range(steps - 1, -1, -1):
        dh = dh_out[:, t] + dh_next
        dc = dc_next + dh * dc_from_h[:, t]
        dz_t = np.concatenate([dc, dc, dc, dh], axis=1) * coef[:, t]
        dz[:, t] = dz_t
        dc_next = dc * gf[:, t]
        dh_next = dz_t @ p.U
    dU = dz.reshape(-1, 4 * u).T @ cache.h[:, :-1].reshape(-1, u)
    return dz, dU


def _expand_upstream(cache: LSTMCache, p: LSTMParams, upstream):
    u = p.units
    upstream = np.asarray(upstream, dtype=np.float64)
    n = cache.gates.shape[0]
    seq_shape = cache.batch_shape + (cache.steps, u)
    last_shape = cache.batch_shape + (u,)
    if upstream.shape == seq_shape:
        return upstream.reshape(n, cache.steps, u)
    if upstream.shape == last_shape:
        dh_out = np.zeros((n, cache.steps, u))
        dh_out[:, -1] = upstream.reshape(n, u)
        return dh_out
    raise DimensionError(f"lstm upstream shape {upstream.shape} matches neither {seq_shape} nor {last_shape}")


def _check_cache(x, p: LSTMParams, cache: LSTMCache, repeated: bool):
    if cache.repeated != repeated:
        raise ConsistencyError("lstm cache was produced by the other forward variant")
    if cache.gates.shape[-1] != 4 * p.units or cache.in_dim != p.in_dim:
        raise ConsistencyError("lstm cache does not match these parameters")
    lead = x.shape[:-1] if repeated else x.shape[:-2]
    if lead != cache.batch_shape or (not repeated and x.shape[-2] != cache.steps):
        raise ConsistencyError(f"lstm cache was built for a different input than {x.shape}")


def lstm_backward(x, p: LSTMParams, cache: LSTMCache, upstream) -> LayerGradients:
    """Exact BPTT gradients.

    ``upstream`` is either the gradient of every hidden state ``(..., T, u)`` or of
    the last one only ``(..., u)``.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_cache(x, p, cache, repeated=False)
    dh_out = _expand_upstream(cache, p, upstream)
    dz, dU = _lstm_core_backward(cache, p, dh_out)
    d = p.in_dim
    dz2 = dz.reshape(-1, 4 * p.units)
    dW = dz2.T @ x.reshape(-1, d)
    dx = (dz @ p.W).reshape(x.shape)
    return LayerGradients(LSTMParams(dW, dU, dz2.sum(axis=0)), dx)


def lstm_backward_repeated(v, p: LSTMParams, cache: LSTMCache, upstream) -> LayerGradients:
    """Backward of :func:`lstm_forward_repeated_cached`; the input gradient is w.r.t. ``v``."""
    v = np.asarray(v, dtype=np.float64)
    _check_cache(v, p, cache, repeated=True)
    dh_out = _expand_upstream(cache, p, upstream)
    dz, dU = _lstm_core_backward(cache, p, dh_out)
    dz_sum = dz.sum(axis=1)
    dW = dz_sum.T @ v.reshape(-1, p.in_dim)
    dv = (dz_sum @ p.W).reshape(v.shape)
    return LayerGradients(LSTMParams(dW, dU, dz_sum.sum(axis=0)), dv)


# ------------------------------------------------------------------ bidirectional


@dataclass
class BiLSTMCache:
    fwd: LSTMCache
    bwd: LSTMCache


def bilstm_forward_cached(x, p: BiLSTMParams):
    x = np.asarray(x, dtype=np.float64)
    h_f, c_f = lstm_forward_cached(x, p.fwd, return_sequences=False)
    h_b, c_b = lstm_forward_cached(np.ascontiguousarray(x[..., ::-1, :]), p.bwd, return_sequences=False)
    return np.concatenate([h_f, h_b], axis=-1), BiLSTMCache(c_f, c_b)


def bilstm_forward(x, p: BiLSTMParams) -> np.ndarray:
    """Final states of a forward LSTM and of a second LSTM run over the reversed sequence, concatenated."""
    return bilstm_forward_cached(x, p)[0]


def bilstm_backward(x, p: BiLSTMParams, cache: BiLSTMCache, upstream) -> LayerGradients:
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    u = p.fwd.units
    if upstream.shape[-1] != u + p.bwd.units:
        raise DimensionError(f"bilstm upstream last axis {upstream.shape[-1]} != {u + p.bwd.units}")
    g_f = lstm_backward(x, p.fwd, cache.fwd, upstream[..., :u])
    g_b = lstm_backward(np.ascontiguousarray(x[..., ::-1, :]), p.bwd, cache.bwd, upstream[..., u:])
    dx = g_f.input + g_b.input[..., ::-1, :]
    return LayerGradients(BiLSTMParams(g_f.params, g_b.params), dx)


# ------------------------------------------------------------------------ dropout


def dropout(x, rate: float, mode: str, rng: Rng | None = None):
    """Inverted dropout. Returns ``(output, mask)``; ``mask`` is None when nothing was dropped."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(upstream, mask):
    return upstream if mask is None else upstream * mask


# -------------------------------------------------------------------------- dense

_ACTIVATIONS = ("relu", "linear")


def _dense_preact(x, p: DenseParams):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.weights.shape[1]:
        raise DimensionError(f"dense expects (..., {p.weights.shape[1]}) input, got {x.shape}")
    return x @ p.weights.T + p.bias


def dense_forward(x, p: DenseParams, activation: str = "linear") -> np.ndarray:
    if activation not in _ACTIVATIONS:
        raise ParameterError(f"unknown activation {activation!r}")
    z = _dense_preact(x, p)
    return relu(z) if activation == "relu" else z


def dense_backward(x, p: DenseParams, activation: str, upstream) -> LayerGradients:
    x = np.asarray(x, dtype=np.float64)
    z = _dense_preact(x, p)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != z.shape:
        raise DimensionError(f"dense upstream shape {upstream.shape} != output shape {z.shape}")
    dz = np.where(z > 0.0, upstream, 0.0) if activation == "relu" else upstream
    dz2 = dz.reshape(-1, z.shape[-1])
    dW = dz2.T @ x.reshape(-1, x.shape[-1])
    return LayerGradients(DenseParams(dW, dz2.sum(axis=0)), dz @ p.weights)

