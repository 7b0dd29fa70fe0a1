"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twins.
Set ``ENERGYGAN_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

from energygan import _kernels_py

try:
    if os.environ.get("ENERGYGAN_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by ENERGYGAN_BACKEND")
    from energygan import _kernels as _compiled
except ImportError:
    _compiled = None

_impls = {"python": _kernels_py}
if _compiled is not None:
    _impls["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_impl = _impls[BACKEND]

# sampling coordinates are clamped here so integer casts stay defined
_COORD_LIMIT = 1e7


def available():
    return sorted(_impls)


def set_backend(name):
    """Switch the active kernel implementation; returns the previous name."""
    global BACKEND, _impl
    if name not in _impls:
        raise ValueError(f"kernel backend {name!r} not available (have {available()})")
    prev = BACKEND
    BACKEND, _impl = name, _impls[name]
    return prev


def im2col(xp, k, stride, oh, ow):
    return _impl.im2col(np.ascontiguousarray(xp), k, stride, oh, ow)


def col2im(cols, k, stride, oh, ow, padded_shape):
    return _impl.col2im(np.ascontiguousarray(cols), k, stride, oh, ow, tuple(padded_shape))


def _coords(v):
    v = np.nan_to_num(np.asarray(v, dtype=np.float64), nan=-_COORD_LIMIT,
                      posinf=_COORD_LIMIT, neginf=-_COORD_LIMIT)
    return np.ascontiguousarray(np.clip(v, -_COORD_LIMIT, _COORD_LIMIT).ravel())


def sample_bilinear(src, xs, ys):
    return _impl.sample_bilinear(np.ascontiguousarray(src, dtype=np.float64), _coords(xs), _coords(ys))


def sample_nearest(src, xs, ys):
    return _impl.sample_nearest(np.ascontiguousarray(src, dtype=np.float64), _coords(xs), _coords(ys))
