"""Differentiable tensor operations.

Every function takes and returns :class:`~forgelens.autodiff.tensor.Tensor`
values, computes the forward result eagerly with numpy, and registers a
backward closure on the active tape when one exists and some input
requires gradients.

Convolution accumulates its inner sum in a fixed (channel, row, col)
kernel order, so in float64 the forward pass is bit-identical to a naive
six-loop implementation.
"""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import ConfigError, ShapeError
from .tensor import Tensor, active_tape

__all__ = [
    "as_tensor", "add", "sub", "mul", "div", "neg", "scale", "add_const",
    "matmul", "reshape", "transpose", "concat", "strided_slice", "roll",
    "gather", "sum_", "mean_", "relu", "gelu", "softmax", "log_softmax",
    "layer_norm", "batch_norm_train", "batch_norm_eval", "dropout",
    "conv2d", "max_pool2d", "cross_entropy",
]


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _maybe_record(out: Tensor, inputs: tuple, backward) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    return _maybe_record(
        out, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _maybe_record(out, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar without materializing a constant tensor."""
    s = float(s)
    out = Tensor(a.data * s)
    return _maybe_record(out, (a,), lambda g: (g * s,))


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + float(c))
    return _maybe_record(out, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics (inner dims contract)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires tensors with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _maybe_record(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _maybe_record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return _maybe_record(out, (a,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _maybe_record(out, tuple(tensors), backward)


def strided_slice(a: Tensor, key) -> Tensor:
    """Slice with basic (slice/int-free) indexing; gradient scatters back."""
    out_data = a.data[key]
    out = Tensor(out_data)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _maybe_record(out, (a,), backward)


def roll(a: Tensor, shifts, axes) -> Tensor:
    """Toroidal roll; the inverse roll restores the input exactly."""
    shifts = tuple(int(s) for s in (shifts if isinstance(shifts, (tuple, list)) else (shifts,)))
    axes = tuple(int(s) for s in (axes if isinstance(axes, (tuple, list)) else (axes,)))
    out = Tensor(np.roll(a.data, shifts, axis=axes))
    inverse = tuple(-s for s in shifts)
    return _maybe_record(out, (a,), lambda g: (np.roll(g, inverse, axis=axes),))


def gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Index rows of ``a`` along axis 0; duplicate indices accumulate grads."""
    idx = np.asarray(indices)
    out = Tensor(a.data[idx])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _maybe_record(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.data.shape).copy(),)

    return _maybe_record(out, (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.data.shape).copy(),)

    return _maybe_record(out, (a,), backward)


# ---------------------------------------------------------------------------
# activations and normalization


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    return _maybe_record(out, (a,), lambda g: (g * (a.data > 0),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU; the backward pass differentiates the same form."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return _maybe_record(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    if a.data.shape[axis] == 0:
        raise ShapeError("softmax along an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _maybe_record(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ShapeError("log_softmax along an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _maybe_record(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine (gamma, beta)."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layer_norm affine parameters must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    out = Tensor(gamma.data * xhat + beta.data)
    d = x.data.shape[-1]

    def backward(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.data
        dx = ivar * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _maybe_record(out, (x, gamma, beta), backward)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch normalization over (batch, height, width) of an NCHW tensor.

    Returns ``(out, batch_mean, batch_var)`` where the stats are plain
    arrays (biased variance) for the caller's running-average update.
    Batch size 1 is rejected: a single sample has no usable variance.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ConfigError("batch_norm in training mode requires batch size >= 2")
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    gamma_b = gamma.data.reshape(1, -1, 1, 1)
    out = Tensor(gamma_b * xhat + beta.data.reshape(1, -1, 1, 1))

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma_b
        dx = (ivar / m) * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                           - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return dx, dgamma, dbeta

    out = _maybe_record(out, (x, gamma, beta), backward)
    return out, mu.reshape(-1), var.reshape(-1)


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float = 1e-5) -> Tensor:
    """Normalize with frozen running statistics (inference mode)."""
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got shape {x.shape}")
    ivar = (1.0 / np.sqrt(running_var + eps)).reshape(1, -1, 1, 1).astype(x.dtype)
    mu = running_mean.reshape(1, -1, 1, 1).astype(x.dtype)
    gamma_b = gamma.data.reshape(1, -1, 1, 1)
    xhat = (x.data - mu) * ivar
    out = Tensor(gamma_b * xhat + beta.data.reshape(1, -1, 1, 1))

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dx = g * gamma_b * ivar
        return dx, dgamma, dbeta

    return _maybe_record(out, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference
    is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    factor = 1.0 / (1.0 - rate)
    out = Tensor(x.data * keep * factor)
    return _maybe_record(out, (x,), lambda g: (g * keep * factor,))


# ---------------------------------------------------------------------------
# convolution and pooling


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2D cross-correlation of NCHW input with FCHW kernels.

    Output spatial size is floor((H + 2p - kh) / s) + 1. The kernel sum
    runs in (c, i, j) order so float64 results match a direct nested-loop
    reference bit for bit.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and FCHW weights")
    n, c, h, wdt = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if kh > h + 2 * ph or kw > wdt + 2 * pw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{wdt + 2 * pw}")
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wdt + 2 * pw - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    out_data = np.zeros((n, f, oh, ow), dtype=x.dtype)
    # Fixed accumulation order: channel-major, then kernel row, then col.
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, ci, i:i + (oh - 1) * sh + 1:sh, j:j + (ow - 1) * sw + 1:sw]
                out_data += w.data[None, :, ci, i, j, None, None] * patch[:, None, :, :]
    if b is not None:
        if b.shape != (f,):
            raise ShapeError("conv2d bias must have one entry per filter")
        out_data = out_data + b.data.reshape(1, -1, 1, 1)
    out = Tensor(out_data)

    def backward(g):
        dw = np.zeros_like(w.data)
        dxp = np.zeros_like(xp)
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, ci, i:i + (oh - 1) * sh + 1:sh, j:j + (ow - 1) * sw + 1:sw]
                    dw[:, ci, i, j] = np.einsum("nhw,nfhw->f", patch, g)
                    dxp[:, ci, i:i + (oh - 1) * sh + 1:sh, j:j + (ow - 1) * sw + 1:sw] += \
                        np.einsum("nfhw,f->nhw", g, w.data[:, ci, i, j])
        dx = dxp[:, :, ph:ph + h, pw:pw + wdt] if (ph or pw) else dxp
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _maybe_record(out, inputs, backward)


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling; kernel must divide both spatial dims."""
    k = int(kernel)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"max_pool2d kernel {k} must divide spatial dims {h}x{w}")
    oh, ow = h // k, w // k
    win = x.data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0])

    def backward(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)

    return _maybe_record(out, (x,), backward)


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class under softmax.

    ``labels`` is an integer array; entries must index valid classes.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, C) logits, got {logits.shape}")
    n, num_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if n < 1:
        raise ShapeError("cross_entropy needs at least one sample")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(f"labels must lie in [0, {num_classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    picked = log_probs[np.arange(n), labels]
    out = Tensor(np.asarray(-picked.mean(), dtype=logits.dtype))

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        return (g * probs / n,)

    return _maybe_record(out, (logits,), backward)
