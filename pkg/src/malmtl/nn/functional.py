"""Forward/backward kernels on float64 numpy arrays.

Image tensors are laid out (N, C, H, W); a 3-D (C, H, W) input is treated as
a batch of one. Every ``*_forward`` returns ``(out, cache)`` and the matching
``*_backward(cache, dout)`` returns the input gradient (plus parameter
gradients where the op has parameters).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01


class ShapeMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


# -- convolution ---------------------------------------------------------------

def conv2d_forward(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (O,C,k,k)."""
    x, squeeze = _as_batch(x)
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c_w != c:
        raise ShapeMismatch(f"kernel expects {c_w} input channels, input has {c}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ weight.reshape(o, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    cache = (cols, xp.shape, weight, stride, pad, squeeze, bias is not None)
    return (out[0] if squeeze else np.ascontiguousarray(out)), cache


def conv2d_backward(cache, dout):
    """Returns (dx, dweight, dbias)."""
    cols, xp_shape, weight, stride, pad, squeeze, has_bias = cache
    dout = np.asarray(dout, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    n, o, ho, wo = dout.shape
    _, c, kh, kw = weight.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dweight = (d2.T @ cols).reshape(weight.shape)
    dbias = d2.sum(axis=0) if has_bias else None
    dcols = (d2 @ weight.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return (dxp[0] if squeeze else dxp), dweight, dbias


def conv2d(x, weight, stride=1, pad=0, bias=None):
    return conv2d_forward(x, weight, bias, stride, pad)[0]


# -- pooling -------------------------------------------------------------------

def maxpool2d_forward(x, k=2, stride=2):
    x, squeeze = _as_batch(x)
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeMismatch(f"pool window {k} exceeds input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(n, c, ho, wo, k * k)
    # np.argmax returns the first maximal position in row-major window order
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (x.shape, arg, k, stride, squeeze)
    return (out[0] if squeeze else out), cache


def maxpool2d_backward(cache, dout):
    shape, arg, k, stride, squeeze = cache
    dout = np.asarray(dout, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    ho, wo = arg.shape[2:]
    dx = np.zeros(shape)
    for p in range(k * k):
        i, j = divmod(p, k)
        dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(arg == p, dout, 0.0)
    return dx[0] if squeeze else dx


def maxpool2d(x, k=2, stride=2):
    return maxpool2d_forward(x, k, stride)[0]


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = (i * n_in) // n_out, ((i + 1) * n_in) // n_out
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool_forward(x, out_hw):
    """Average region [floor(iH/h), floor((i+1)H/h)) x (same along W)."""
    x, squeeze = _as_batch(x)
    h, w = x.shape[2:]
    oh, ow = out_hw
    if oh > h or ow > w or oh < 1 or ow < 1:
        raise ShapeMismatch(f"cannot pool {h}x{w} down to {oh}x{ow}")
    ph, pw = _pool_matrix(h, oh), _pool_matrix(w, ow)
    out = ph @ x @ pw.T
    return (out[0] if squeeze else out), (ph, pw, squeeze)


def adaptive_avg_pool_backward(cache, dout):
    ph, pw, squeeze = cache
    dout = np.asarray(dout, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    dx = ph.T @ dout @ pw
    return dx[0] if squeeze else dx


def adaptive_avg_pool(x, out_hw):
    return adaptive_avg_pool_forward(x, out_hw)[0]


# -- fully connected -----------------------------------------------------------

def fully_connected_forward(x, weight, bias=None):
    """``out = x @ weight.T + bias`` for x of shape (n,) or (N, n); weight (m, n)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input of shape {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"bias of shape {bias.shape} does not match weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return (out[0] if squeeze else out), (x, weight, squeeze, bias is not None)


def fully_connected_backward(cache, dout):
    x, weight, squeeze, has_bias = cache
    dout = np.asarray(dout, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    dx = dout @ weight
    return (dx[0] if squeeze else dx), dout.T @ x, (dout.sum(axis=0) if has_bias else None)


def fully_connected(x, weight, bias=None):
    return fully_connected_forward(x, weight, bias)[0]


# -- activations ---------------------------------------------------------------
# The negative branch covers x <= 0 for every kind, so at exactly 0 the
# derivative is the negative-side slope.

def _channel_view(a, x):
    """Broadcast per-channel parameters along axis 1 of x (axis 0 if 1-D)."""
    a = np.asarray(a, dtype=np.float64)
    if x.ndim <= 1:
        return a
    return a.reshape((1, -1) + (1,) * (x.ndim - 2))


def activate_forward(x, kind: str, a=None, alpha: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    pos = x > 0
    if kind == "relu":
        out = np.where(pos, x, 0.0)
    elif kind == "leaky_relu":
        out = np.where(pos, x, LEAKY_SLOPE * x)
    elif kind == "prelu":
        if a is None:
            raise ValueError("PReLU needs per-channel slopes")
        out = np.where(pos, x, _channel_view(a, x) * x)
    elif kind == "elu":
        out = np.where(pos, x, alpha * np.expm1(np.minimum(x, 0.0)))
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out, (x, kind, a, alpha)


def activate_backward(cache, dout):
    """Returns (dx, da); ``da`` is None except for PReLU."""
    x, kind, a, alpha = cache
    pos = x > 0
    if kind == "relu":
        return np.where(pos, dout, 0.0), None
    if kind == "leaky_relu":
        return np.where(pos, dout, LEAKY_SLOPE * dout), None
    if kind == "prelu":
        dx = np.where(pos, dout, _channel_view(a, x) * dout)
        contrib = np.where(pos, 0.0, x * dout)
        if x.ndim <= 1:
            da = contrib
        else:
            axes = (0,) + tuple(range(2, x.ndim))
            da = contrib.sum(axis=axes)
        return dx, da
    return np.where(pos, dout, alpha * np.exp(np.minimum(x, 0.0)) * dout), None


def activate(x, kind: str, a=None, alpha: float = 1.0):
    return activate_forward(x, kind, a, alpha)[0]


def tanh_forward(x):
    out = np.tanh(x)
    return out, out


def tanh_backward(out, dout):
    return dout * (1.0 - out * out)


def sigmoid_forward(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out, out


def sigmoid_backward(out, dout):
    return dout * out * (1.0 - out)


def upsample2x_forward(x):
    x, squeeze = _as_batch(x)
    out = x.repeat(2, axis=2).repeat(2, axis=3)
    return (out[0] if squeeze else out), squeeze


def upsample2x_backward(squeeze, dout):
    dout = np.asarray(dout, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    n, c, h, w = dout.shape
    dx = dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    return dx[0] if squeeze else dx


# -- loss ----------------------------------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean ``-log p[label]`` and its gradient w.r.t. ``logits``.

    ``logits`` is (K,) with an int label, or (N, K) with N labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels))
    k = z.shape[1]
    if k < 2:
        raise ShapeMismatch("softmax cross-entropy needs at least 2 classes")
    if lab.shape != (z.shape[0],):
        raise ShapeMismatch(f"{lab.shape[0]} labels for {z.shape[0]} rows of logits")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k}), got {lab.min()}..{lab.max()}")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, lab].mean()
    grad = np.exp(logp)
    grad[rows, lab] -= 1.0
    grad /= z.shape[0]
    return float(loss), (grad[0] if single else grad)
