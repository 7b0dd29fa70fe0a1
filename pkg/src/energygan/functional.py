"""Differentiable network primitives on NCHW tensors."""
import numpy as np

from energygan import _backend
from energygan.errors import DimensionError
from energygan.tensor import Tensor, record


def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation. ``weight`` is (out_ch, in_ch, k, k)."""
    if stride < 1 or padding < 0:
        raise DimensionError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv2d input {x.shape} does not match weight {weight.shape} (NCHW / OIkk)")
    if weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"square kernels only, got weight {weight.shape}")
    n, c, h, w = x.shape
    f, k = weight.shape[0], weight.shape[2]
    oh, ow = _conv_out(h, k, stride, padding), _conv_out(w, k, stride, padding)
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {k} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _backend.im2col(xp, k, stride, oh, ow)
    w2 = weight.data.reshape(f, -1)
    out = (w2 @ cols).reshape(f, n, oh, ow).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out)
    padded_shape = xp.shape

    def bw(g):
        gf = g.transpose(1, 0, 2, 3).reshape(f, -1)
        dw = (gf @ cols.T).reshape(weight.shape)
        dxp = _backend.col2im(w2.T @ gf, k, stride, oh, ow, padded_shape)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, inputs, bw)


def conv2d_transpose(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution. ``weight`` is (in_ch, out_ch, k, k).

    The forward pass is the input-gradient of :func:`conv2d` with the same
    weight, stride and padding.
    """
    if stride < 1 or padding < 0:
        raise DimensionError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"conv2d_transpose input {x.shape} does not match weight {weight.shape} (NCHW / IOkk)")
    n, cin, h, w = x.shape
    cout, k = weight.shape[1], weight.shape[2]
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    oh, ow = hf - 2 * padding, wf - 2 * padding
    if oh < 1 or ow < 1:
        raise DimensionError(f"padding {padding} leaves no output for input {x.shape}")
    w2 = weight.data.reshape(cin, -1)
    xf = x.data.transpose(1, 0, 2, 3).reshape(cin, -1)
    full = _backend.col2im(w2.T @ xf, k, stride, h, w, (n, cout, hf, wf))
    out = full[:, :, padding:padding + oh, padding:padding + ow]
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _backend.im2col(gp, k, stride, h, w)
        dx = (w2 @ gcols).reshape(cin, n, h, w).transpose(1, 0, 2, 3)
        dw = (xf @ gcols.T).reshape(weight.shape)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d_transpose", out, inputs, bw)


# -- activations ---------------------------------------------------------------
def relu(x):
    on = x.data > 0
    return record("relu", x.data * on, (x,), lambda g: (g * on,))


def leaky_relu(x, slope=0.2):
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    scale = np.where(x.data > 0, 1, slope).astype(x.dtype)
    return record("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def tanh(x):
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x):
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype)
    return record("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def activation(x, kind, slope=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- normalization and noise ---------------------------------------------------
def norm2d(x, gamma, beta, mode="train", running_mean=None, running_var=None,
           momentum=0.1, eps=1e-5):
    """Per-channel normalization over (N, H, W).

    In ``train`` mode batch statistics are used and, when given, the running
    buffers are updated in place (unbiased variance). ``eval`` mode reads the
    running buffers.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta {gamma.shape}/{beta.shape} vs {c} channels of {x.shape}")
    g4 = gamma.data.reshape(1, c, 1, 1)
    b4 = beta.data.reshape(1, c, 1, 1)
    if mode == "train":
        m = x.size // c
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        invstd = 1 / np.sqrt(var + x.dtype.type(eps))
        xhat = xc * invstd
        if running_mean is not None:
            unbiased = var.ravel() * (m / max(m - 1, 1))
            running_mean *= 1 - momentum
            running_mean += momentum * mu.ravel()
            running_var *= 1 - momentum
            running_var += momentum * unbiased

        def bw(g):
            dxhat = g * g4
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = invstd / m * (m * dxhat - s1 - xhat * s2)
            return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    elif mode == "eval":
        if running_mean is None:
            raise ValueError("eval mode needs running statistics")
        mu = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        invstd = (1 / np.sqrt(running_var.reshape(1, c, 1, 1) + eps)).astype(x.dtype)
        xhat = (x.data - mu) * invstd

        def bw(g):
            return g * g4 * invstd, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return record("norm2d", xhat * g4 + b4, (x, gamma, beta), bw)


def dropout(x, rate, rng, active=True):
    """Zero elements with probability ``rate`` and rescale survivors."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not active or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1 / (1 - rate))
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# -- channel plumbing ----------------------------------------------------------
def concat_channels(a, b):
    if a.ndim != 4 or b.ndim != 4 or (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise DimensionError(f"concat_channels needs matching N, H, W: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return record("concat", out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(a, start, stop):
    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return record("slice", np.ascontiguousarray(a.data[:, start:stop]), (a,), bw)


__all__ = [
    "Tensor", "conv2d", "conv2d_transpose", "relu", "leaky_relu", "tanh", "sigmoid",
    "activation", "norm2d", "dropout", "concat_channels", "slice_channels",
]
