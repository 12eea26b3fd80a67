"""Dense float64 arrays, a handful of checked operations and the seeded generator.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the shape and finiteness checks the rest of the package relies on.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError

DTYPE = np.float64

_debug = os.environ.get("TEMPCAST_DEBUG", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """Toggle the post-operation NaN/Inf check used by :func:`matmul` and :func:`ewise`."""
    global _debug
    _debug = bool(enabled)


def debug_enabled() -> bool:
    return _debug


def tensor(data, shape=None) -> np.ndarray:
    """Build a float64 tensor, rejecting non-finite values and zero-size extents."""
    arr = np.array(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot lay out {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if any(s < 1 for s in arr.shape):
        raise DimensionError(f"all extents must be positive, got shape {arr.shape}")
    check_finite(arr, "tensor construction")
    return arr


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite value produced by {where}")
    return arr


def _after(arr, where):
    if _debug:
        check_finite(arr, where)
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _after(a @ b, "matmul")


def sigmoid(x):
    # tanh form never overflows, unlike 1 / (1 + exp(-x)) for large negative x
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def relu(x):
    return np.maximum(x, 0.0)


_UNARY = {"tanh": np.tanh, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def ewise(op: str, a, b=None) -> np.ndarray:
    """Elementwise ``add``/``sub``/``mul`` (equal shapes or a scalar) or ``tanh``/``sigmoid``/``relu``."""
    a = np.asarray(a, dtype=DTYPE)
    if op in _UNARY:
        if b is not None:
            raise ParameterError(f"{op} takes a single operand")
        return _after(_UNARY[op](a), op)
    if op not in _BINARY:
        raise ParameterError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ParameterError(f"{op} needs two operands")
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape and a.ndim and b.ndim:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
    return _after(_BINARY[op](a, b), op)


class Rng:
    """Seeded generator (numpy PCG64). Same seed gives the same draws on every platform."""

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, low, high, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def normal(self, loc, scale, shape) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high) -> int:
        return int(self._gen.integers(low, high))


def uniform_init(rng: Rng, shape, limit: float) -> np.ndarray:
    if not limit > 0:
        raise ParameterError(f"init limit must be positive, got {limit}")
    return rng.uniform(-limit, limit, tuple(shape)).astype(DTYPE, copy=False)
