"""Layer objects holding parameters, built on the functional kernels.

A layer's ``forward`` returns ``(out, cache)``; ``backward(cache, dout)``
returns the input gradient and *adds* parameter gradients into each
``Param.grad``. Keeping the cache outside the layer lets one layer be applied
several times before any backward pass (as the cycle-consistency path needs).
"""

from __future__ import annotations

import numpy as np

from . import functional as F


class Param:
    """A named float64 parameter array with an accumulated gradient."""

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64).copy()
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Module:
    def params(self) -> list[Param]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dout):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)[0]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, stride=1, pad=None, rng=None, name="conv"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Param(f"{name}.weight", he_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self.bias = Param(f"{name}.bias", np.zeros(out_ch))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return F.conv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.pad)

    def backward(self, cache, dout):
        dx, dw, db = F.conv2d_backward(cache, dout)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None, name="fc"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(f"{name}.weight", he_normal(rng, (n_out, n_in), n_in))
        self.bias = Param(f"{name}.bias", np.zeros(n_out))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return F.fully_connected_forward(x, self.weight.value, self.bias.value)

    def backward(self, cache, dout):
        dx, dw, db = F.fully_connected_backward(cache, dout)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class MaxPool2d(Module):
    def __init__(self, k=2, stride=2):
        self.k, self.stride = k, stride

    def forward(self, x):
        return F.maxpool2d_forward(x, self.k, self.stride)

    def backward(self, cache, dout):
        return F.maxpool2d_backward(cache, dout)


class AdaptiveAvgPool2d(Module):
    def __init__(self, out_hw):
        self.out_hw = tuple(out_hw)

    def forward(self, x):
        return F.adaptive_avg_pool_forward(x, self.out_hw)

    def backward(self, cache, dout):
        return F.adaptive_avg_pool_backward(cache, dout)


class Flatten(Module):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dout):
        return dout.reshape(shape)


class Activation(Module):
    """ReLU, LeakyReLU (slope 0.01), PReLU (learned per-channel slope) or ELU."""

    KINDS = ("relu", "leaky_relu", "prelu", "elu")

    def __init__(self, kind: str, channels: int = 1, alpha: float = 1.0, init_slope: float = 0.25, name="act"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}; choose from {self.KINDS}")
        self.kind = kind
        self.alpha = alpha
        self.slope = Param(f"{name}.slope", np.full(channels, init_slope)) if kind == "prelu" else None

    def params(self):
        return [self.slope] if self.slope is not None else []

    def forward(self, x):
        a = self.slope.value if self.slope is not None else None
        return F.activate_forward(x, self.kind, a, self.alpha)

    def backward(self, cache, dout):
        dx, da = F.activate_backward(cache, dout)
        if da is not None:
            self.slope.grad += da
        return dx


class Tanh(Module):
    def forward(self, x):
        return F.tanh_forward(x)

    def backward(self, cache, dout):
        return F.tanh_backward(cache, dout)


class Sigmoid(Module):
    def forward(self, x):
        return F.sigmoid_forward(x)

    def backward(self, cache, dout):
        return F.sigmoid_backward(cache, dout)


class Upsample2x(Module):
    """Nearest-neighbour 2x spatial upsampling."""

    def forward(self, x):
        return F.upsample2x_forward(x)

    def backward(self, cache, dout):
        return F.upsample2x_backward(cache, dout)


class GlobalAvgPool(Module):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def forward(self, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, shape, dout):
        n, c, h, w = shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), shape).copy()


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dout):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dout = layer.backward(c, dout)
        return dout
