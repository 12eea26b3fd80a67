"""Independent reference implementations used as test oracles."""

import math

import numpy as np


def central_diff(f, x, step=1e-5):
    """Gradient of scalar f at array x by central differences (x is restored afterwards)."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + step
        up = f()
        x[i] = orig - step
        down = f()
        x[i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad


def rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def conv1d_loops(x, kernels, bias):
    t_len, c_in = x.shape
    n_f, k, _ = kernels.shape
    out = np.zeros((t_len - k + 1, n_f))
    for t in range(t_len - k + 1):
        for f in range(n_f):
            s = bias[f]
            for j in range(k):
                for c in range(c_in):
                    s += kernels[f, j, c] * x[t + j, c]
            out[t, f] = max(0.0, s)
    return out


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_loops(x, W, U, b):
    """Scalar LSTM recurrence with per-gate loops; returns all hidden states."""
    steps, d = x.shape
    u = U.shape[1]
    h = [0.0] * u
    c = [0.0] * u
    out = []
    for t in range(steps):
        pre = []
        for r in range(4 * u):
            s = b[r]
            for k in range(d):
                s += W[r, k] * x[t, k]
            for k in range(u):
                s += U[r, k] * h[k]
            pre.append(s)
        new_h, new_c = [], []
        for q in range(u):
            i = _sig(pre[q])
            f = _sig(pre[u + q])
            g = math.tanh(pre[2 * u + q])
            o = _sig(pre[3 * u + q])
            cq = f * c[q] + i * g
            new_c.append(cq)
            new_h.append(o * math.tanh(cq))
        h, c = new_h, new_c
        out.append(list(h))
    return np.array(out)


def adam_scalar(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam on a scalar parameter; returns every iterate."""
    m = v = 0.0
    thetas = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        thetas.append(theta)
    return thetas
