"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a| + |n|, floor), elementwise worst case."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def module_grad_error(layer, x: np.ndarray, seed: int = 0, h: float = 1e-6) -> float:
    """Worst ``rel_error`` of a layer's input and parameter gradients.

    The scalar probed is ``sum(forward(x) * r)`` for a fixed random ``r``,
    so ``r`` is also the upstream gradient fed to ``backward``.
    """
    r = np.random.default_rng(seed).standard_normal(layer.forward(x)[0].shape)

    def loss():
        return float(np.sum(layer.forward(x)[0] * r))

    layer.zero_grad()
    _, cache = layer.forward(x)
    dx = layer.backward(cache, r)
    worst = rel_error(dx, numeric_grad(loss, x, h))
    for p in layer.params():
        worst = max(worst, rel_error(p.grad, numeric_grad(loss, p.value, h)))
    return worst
