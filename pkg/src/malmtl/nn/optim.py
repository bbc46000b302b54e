"""Adaptive gradient optimizers: Adam, Adagrad, Adadelta, RMSprop, Nadam.

State is kept per parameter, so a step only advances the parameters it is
given; heads that saw no data in a batch are simply left out of the step.
"""

from __future__ import annotations

import numpy as np

from .functional import ShapeMismatch


class Optimizer:
    name = "base"

    def __init__(self, lr: float):
        self.lr = lr
        self.state: dict[int, dict] = {}

    def _slot(self, key, shape) -> dict:
        st = self.state.get(key)
        if st is None:
            st = self.state[key] = {"t": 0}
            st.update({k: np.zeros(shape) for k in self._accumulators})
        return st

    _accumulators: tuple[str, ...] = ()

    def update(self, key, value: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated ``value`` for the parameter identified by ``key``."""
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if value.shape != grad.shape:
            raise ShapeMismatch(f"gradient shape {grad.shape} does not match parameter {value.shape}")
        st = self._slot(key, value.shape)
        st["t"] += 1
        return self._apply(st, value, grad)

    def step(self, params) -> None:
        for p in params:
            p.value[...] = self.update(id(p), p.value, p.grad)

    def _apply(self, st, value, grad):
        raise NotImplementedError


class Adam(Optimizer):
    name = "adam"
    _accumulators = ("m", "v")

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def _apply(self, st, value, grad):
        b1, b2, t = self.beta1, self.beta2, st["t"]
        st["m"] = b1 * st["m"] + (1 - b1) * grad
        st["v"] = b2 * st["v"] + (1 - b2) * grad * grad
        m_hat = st["m"] / (1 - b1 ** t)
        v_hat = st["v"] / (1 - b2 ** t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Nadam(Adam):
    """Adam with a Nesterov look-ahead on the first moment (constant beta1)."""

    name = "nadam"

    def _apply(self, st, value, grad):
        b1, b2, t = self.beta1, self.beta2, st["t"]
        st["m"] = b1 * st["m"] + (1 - b1) * grad
        st["v"] = b2 * st["v"] + (1 - b2) * grad * grad
        m_hat = b1 * st["m"] / (1 - b1 ** (t + 1)) + (1 - b1) * grad / (1 - b1 ** t)
        v_hat = st["v"] / (1 - b2 ** t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Adagrad(Optimizer):
    name = "adagrad"
    _accumulators = ("g2",)

    def __init__(self, lr=0.01, eps=1e-10):
        super().__init__(lr)
        self.eps = eps

    def _apply(self, st, value, grad):
        st["g2"] = st["g2"] + grad * grad
        return value - self.lr * grad / (np.sqrt(st["g2"]) + self.eps)


class RMSprop(Optimizer):
    name = "rmsprop"
    _accumulators = ("v",)

    def __init__(self, lr=0.001, rho=0.9, eps=1e-8):
        super().__init__(lr)
        self.rho, self.eps = rho, eps

    def _apply(self, st, value, grad):
        st["v"] = self.rho * st["v"] + (1 - self.rho) * grad * grad
        return value - self.lr * grad / (np.sqrt(st["v"]) + self.eps)


class Adadelta(Optimizer):
    """Zeiler's unit-corrected update; ``lr`` scales the step (1.0 = original)."""

    name = "adadelta"
    _accumulators = ("g2", "dx2")

    def __init__(self, lr=1.0, rho=0.95, eps=1e-6):
        super().__init__(lr)
        self.rho, self.eps = rho, eps

    def _apply(self, st, value, grad):
        rho, eps = self.rho, self.eps
        st["g2"] = rho * st["g2"] + (1 - rho) * grad * grad
        delta = -np.sqrt(st["dx2"] + eps) / np.sqrt(st["g2"] + eps) * grad
        st["dx2"] = rho * st["dx2"] + (1 - rho) * delta * delta
        return value + self.lr * delta


OPTIMIZERS = {cls.name: cls for cls in (Adam, Adagrad, Adadelta, RMSprop, Nadam)}


def make_optimizer(name: str, **kwargs) -> Optimizer:
    try:
        return OPTIMIZERS[name.lower()](**kwargs)
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
