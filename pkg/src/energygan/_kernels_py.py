"""Pure numpy twins of the compiled kernels in ``_kernels.pyx``.

Signatures and floating-point operation order match the Cython versions
exactly, so swapping backends never changes a result bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, oh, ow):
    n_batch, n_chan = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    # (N, C, oh, ow, k, k) -> (C, k, k, N, oh, ow)
    cols = win.transpose(1, 4, 5, 0, 2, 3)
    return np.ascontiguousarray(cols).reshape(n_chan * k * k, n_batch * oh * ow)


def col2im(cols, k, stride, oh, ow, padded_shape):
    n_batch, n_chan = padded_shape[:2]
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    c6 = cols.reshape(n_chan, k, k, n_batch, oh, ow)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                c6[:, ki, kj].transpose(1, 0, 2, 3)
            )
    return xp


def sample_bilinear(src, xs, ys):
    h, w, _ = src.shape
    xf = np.floor(xs)
    yf = np.floor(ys)
    fx = xs - xf
    fy = ys - yf
    x0 = xf.astype(np.intp)
    y0 = yf.astype(np.intp)
    x1 = x0 + 1
    y1 = y0 + 1
    w00 = ((1.0 - fx) * (1.0 - fy))[:, None]
    w10 = (fx * (1.0 - fy))[:, None]
    w01 = ((1.0 - fx) * fy)[:, None]
    w11 = (fx * fy)[:, None]

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        vals[~ok] = 0.0
        return vals

    out = ((w00 * tap(y0, x0) + w10 * tap(y0, x1)) + w01 * tap(y1, x0)) + w11 * tap(y1, x1)
    outside = (x1 < 0) | (y1 < 0) | (x0 >= w) | (y0 >= h)
    out[outside] = 0.0
    return out


def sample_nearest(src, xs, ys):
    h, w, n_chan = src.shape
    ix = np.floor(xs + 0.5).astype(np.intp)
    iy = np.floor(ys + 0.5).astype(np.intp)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros((xs.shape[0], n_chan), dtype=np.float64)
    out[ok] = src[iy[ok], ix[ok]]
    return out
