"""Adam with bias correction and the inverse-time learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError


@dataclass
class AdamState:
    """Moment buffers keyed by parameter name, plus the update counter ``t``."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ParameterError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.t < 0:
            raise ParameterError(f"step counter must be >= 0, got {self.t}")


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam update. Returns ``(new_params, new_state)``; the inputs are left untouched.

    ``params`` and ``grads`` map names to arrays (scalars are accepted too). With
    ``t`` the post-increment step count:

        m = b1 m + (1 - b1) g          v = b2 v + (1 - b2) g^2
        m_hat = m / (1 - b1^t)         v_hat = v / (1 - b2^t)
        theta = theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if params.keys() != grads.keys():
        raise DimensionError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        theta = np.asarray(theta, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r} at step {t}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * (g * g) if v is None else b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


@dataclass(frozen=True)
class LrSchedule:
    eta0: float = 0.001
    decay: float = 0.0

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ParameterError(f"initial learning rate must be positive, got {self.eta0}")
        if not self.decay >= 0:
            raise ParameterError(f"decay must be non-negative, got {self.decay}")


def lr_at(schedule: LrSchedule, t: int) -> float:
    """eta_t = eta0 / (1 + decay * t)."""
    if t < 0:
        raise ParameterError(f"schedule step must be >= 0, got {t}")
    return schedule.eta0 * (1.0 / (1.0 + schedule.decay * t))
