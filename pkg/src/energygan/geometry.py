"""Homographies between scene pixels and the rectified marker plane.

Coordinates are ``(x, y) = (column, row)`` with pixel centers on integers.
A :class:`Homography` built by this module maps *plane* points to *scene*
points, so rectifying a scene image means warping by its inverse.
"""
from dataclasses import dataclass

import numpy as np

from energygan import _backend
from energygan.errors import (
    DegenerateConfigurationError,
    DimensionError,
    PointAtInfinityError,
)

_H22_EPS = 1e-12


class Homography:
    """Invertible 3x3 projective map stored with ``h[2, 2] == 1``."""

    __slots__ = ("_h",)

    def __init__(self, h):
        h = np.array(h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise DegenerateConfigurationError("homography has non-finite entries")
        scale = np.abs(h).max()
        if scale == 0 or abs(h[2, 2]) < _H22_EPS * scale:
            raise DegenerateConfigurationError(
                f"h[2,2]={h[2, 2]:.3e} cannot be normalized to 1")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) < 1e-12 * np.abs(h).max() ** 3:
            raise DegenerateConfigurationError("homography is singular")
        h.setflags(write=False)
        self._h = h

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @property
    def matrix(self):
        return self._h

    def inverse(self):
        return Homography(np.linalg.inv(self._h))

    def __matmul__(self, other):
        """``(a @ b)(p) == a(b(p))``."""
        return Homography(self._h @ other._h)

    def apply(self, points):
        return apply_homography(self, points)

    def tolist(self):
        return [float(v) for v in self._h.ravel()]

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self._h, other._h)

    def __repr__(self):
        rows = "; ".join(" ".join(f"{v:.6g}" for v in r) for r in self._h)
        return f"Homography([{rows}])"


def apply_homography(h, points):
    """Map one ``(x, y)`` point or an ``(n, 2)`` array through ``h``."""
    m = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    x = m[0, 0] * p[:, 0] + m[0, 1] * p[:, 1] + m[0, 2]
    y = m[1, 0] * p[:, 0] + m[1, 1] * p[:, 1] + m[1, 2]
    w = m[2, 0] * p[:, 0] + m[2, 1] * p[:, 1] + m[2, 2]
    ref = np.abs(m[2, 0] * p[:, 0]) + np.abs(m[2, 1] * p[:, 1]) + abs(m[2, 2])
    if np.any(np.abs(w) <= 1e-12 * ref):
        raise PointAtInfinityError("point maps to the line at infinity")
    out = np.stack([x / w, y / w], axis=1)
    return out[0] if single else out


@dataclass
class CorrespondenceSet:
    """Matched ``scene_points`` and ``plane_points``, each ``(n, 2)``."""

    scene_points: np.ndarray
    plane_points: np.ndarray

    def __post_init__(self):
        self.scene_points = np.asarray(self.scene_points, dtype=np.float64).reshape(-1, 2)
        self.plane_points = np.asarray(self.plane_points, dtype=np.float64).reshape(-1, 2)
        if len(self.scene_points) != len(self.plane_points):
            raise DimensionError(
                f"{len(self.scene_points)} scene points vs {len(self.plane_points)} plane points")
        if len(self.scene_points) < 4:
            raise DegenerateConfigurationError(
                f"need at least 4 correspondences, got {len(self.scene_points)}")

    def __len__(self):
        return len(self.scene_points)


# -- linear algebra ------------------------------------------------------------
def symmetric_eigen(a, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns ``(values, vectors)`` with values ascending and eigenvectors in the
    columns of ``vectors``.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.sqrt((a * a).sum())
    if norm == 0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt((np.triu(a, 1) ** 2).sum() * 2)
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1))
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(vals)
    return vals[order], v[:, order]


def conditioning_transform(points):
    """Similarity moving the centroid to 0 with RMS distance sqrt(2)."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    rms = np.sqrt(((pts - c) ** 2).sum(axis=1).mean())
    if rms == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2) / rms
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])


def dlt_design_matrix(src, dst):
    """Rows of the 2n x 9 system ``A h = 0`` for ``dst ~ H src``."""
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -o, z, z, z, u * x, u * y, u], axis=1)
    r2 = np.stack([z, z, z, -x, -y, -o, v * x, v * y, v], axis=1)
    return np.concatenate([r1, r2], axis=0)


def estimate_homography_dlt(correspondences, precondition=True, rank_tol=1e-12):
    """Least-squares homography mapping plane points onto scene points.

    The algebraic residual ``|A h|`` is minimized over unit ``h`` by the
    eigenvector of ``A^T A`` with the smallest eigenvalue. A near-zero second
    eigenvalue means the correspondences leave a family of solutions.
    """
    src, dst = correspondences.plane_points, correspondences.scene_points
    if precondition:
        t_src, t_dst = conditioning_transform(src), conditioning_transform(dst)
        src = apply_homography(t_src, src)
        dst = apply_homography(t_dst, dst)
    a = dlt_design_matrix(src, dst)
    vals, vecs = symmetric_eigen(a.T @ a)
    if vals[1] <= rank_tol * max(vals[-1], 1e-300):
        raise DegenerateConfigurationError(
            f"design matrix is rank deficient (eigenvalues {vals[0]:.2e}, {vals[1]:.2e})")
    h = vecs[:, 0].reshape(3, 3)
    if precondition:
        h = np.linalg.solve(t_dst, h @ t_src)
    return Homography(h)


# -- raster warping ------------------------------------------------------------
def warp_raster(src, h, out_extent, interpolation="bilinear"):
    """Resample ``src`` so that ``out(p) = src(h^-1 p)``.

    ``out_extent`` is ``(height, width)``. Samples that fall outside ``src``
    read as zero. Use ``nearest`` for label masks.
    """
    oh, ow = int(out_extent[0]), int(out_extent[1])
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"output extent must be positive, got {out_extent}")
    arr = np.asarray(src, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    hinv = (h.inverse().matrix if isinstance(h, Homography)
            else np.linalg.inv(np.asarray(h, dtype=np.float64)))
    ys, xs = np.mgrid[0:oh, 0:ow]
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    w = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    valid = w > 1e-12
    safe_w = np.where(valid, w, 1.0)
    sx = np.where(valid, (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / safe_w, -np.inf)
    sy = np.where(valid, (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / safe_w, -np.inf)
    if interpolation == "bilinear":
        out = _backend.sample_bilinear(arr, sx, sy)
    elif interpolation == "nearest":
        out = _backend.sample_nearest(arr, sx, sy)
    else:
        raise ValueError(f"interpolation must be 'bilinear' or 'nearest', got {interpolation!r}")
    out = out.reshape(oh, ow, arr.shape[2])
    return out[:, :, 0] if squeeze else out
