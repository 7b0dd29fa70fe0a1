"""The 5x4 color checkerboard fiducial: rendering and detection.

Detection only targets rendered scenes. It finds the light (colored) squares
by color, takes the marker's rotation from their second moments, places the
square blobs on the checkerboard lattice, then alternates sub-pixel corner
refinement with DLT re-estimation.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from energygan.errors import DegenerateConfigurationError, MarkerNotFoundError
from energygan.geometry import (
    CorrespondenceSet,
    Homography,
    apply_homography,
    estimate_homography_dlt,
)


@dataclass(frozen=True)
class MarkerSpec:
    """Checkerboard geometry in plane units.

    Square ``(r, c)`` is light when ``r + c`` is even; light squares take
    ``light_colors[r % 2]``.
    """

    cols: int = 5
    rows: int = 4
    square: float = 4.0
    origin: tuple = (3.0, 3.0)
    dark_color: tuple = (0.08, 0.08, 0.10)
    light_colors: tuple = ((0.10, 0.85, 0.90), (0.92, 0.15, 0.80))

    @property
    def size(self):
        return self.cols * self.square, self.rows * self.square

    @property
    def n_inner(self):
        return (self.cols - 1) * (self.rows - 1)

    def inner_corners(self):
        """Plane coordinates of the inner corners, row-major."""
        ox, oy = self.origin
        jj, ii = np.meshgrid(np.arange(1, self.cols), np.arange(1, self.rows))
        return np.stack([ox + jj.ravel() * self.square, oy + ii.ravel() * self.square], axis=1)

    def outer_corners(self):
        ox, oy = self.origin
        w, h = self.size
        return np.array([[ox, oy], [ox + w, oy], [ox + w, oy + h], [ox, oy + h]])

    def square_centers(self):
        ox, oy = self.origin
        cc, rr = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        centers = np.stack([ox + (cc.ravel() + 0.5) * self.square,
                            oy + (rr.ravel() + 0.5) * self.square], axis=1)
        return centers, rr.ravel(), cc.ravel()

    def color_at(self, px, py):
        """RGB colors and a coverage mask for plane points ``px``, ``py``."""
        ox, oy = self.origin
        c = np.floor((px - ox) / self.square).astype(int)
        r = np.floor((py - oy) / self.square).astype(int)
        inside = (c >= 0) & (c < self.cols) & (r >= 0) & (r < self.rows)
        light = ((r + c) % 2) == 0
        rgb = np.empty(px.shape + (3,))
        rgb[:] = self.dark_color
        pal = np.asarray(self.light_colors)
        rgb[light] = pal[r[light] % 2]
        return rgb, inside

    def light_moments(self):
        """Mean and covariance of the light-square area in plane units."""
        ox, oy = self.origin
        s = self.square
        centers, rr, cc = self.square_centers()
        light = ((rr + cc) % 2) == 0
        pts = centers[light]
        mu = pts.mean(axis=0)
        d = pts - mu
        cov = d.T @ d / len(pts) + np.eye(2) * s * s / 12
        return mu, cov


@dataclass
class MarkerDetection:
    corner_points: np.ndarray
    confidence: float
    homography: Homography = field(default=None, repr=False)


def render_marker(spec, h, extent, background=(0.55, 0.45, 0.35), supersample=4):
    """Anti-aliased render of the marker seen through plane-to-scene ``h``."""
    height, width = extent
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    hinv = h.inverse()
    acc = np.zeros((height, width, 3))
    for dy in offs:
        for dx in offs:
            pts = np.stack([(xs + dx).ravel(), (ys + dy).ravel()], axis=1)
            plane = apply_homography(hinv, pts)
            rgb, inside = spec.color_at(plane[:, 0], plane[:, 1])
            rgb[~inside] = background
            acc += rgb.reshape(height, width, 3)
    return acc / supersample**2


def corner_response(gray, sigma=0.8):
    """Saddle strength ``Ixy^2 - Ixx*Iyy`` of the smoothed image (positive at X-corners)."""
    g = ndimage.gaussian_filter(np.asarray(gray, dtype=np.float64), sigma)
    gy, gx = np.gradient(g)
    gxy = np.gradient(gx, axis=0)
    gxx = np.gradient(gx, axis=1)
    gyy = np.gradient(gy, axis=0)
    return gxy * gxy - gxx * gyy


def refine_corner(response, guess, radius):
    """Peak of ``response`` near ``guess`` with a quadratic sub-pixel fit."""
    h, w = response.shape
    gx, gy = guess
    x0, x1 = max(int(np.floor(gx - radius)), 1), min(int(np.ceil(gx + radius)), w - 2)
    y0, y1 = max(int(np.floor(gy - radius)), 1), min(int(np.ceil(gy + radius)), h - 2)
    if x0 > x1 or y0 > y1:
        return None, 0.0
    win = response[y0:y1 + 1, x0:x1 + 1]
    iy, ix = np.unravel_index(np.argmax(win), win.shape)
    cy, cx = y0 + iy, x0 + ix
    patch = response[cy - 1:cy + 2, cx - 1:cx + 2]
    dy, dx = np.mgrid[-1:2, -1:2]
    a = np.stack([dx.ravel() ** 2, dx.ravel() * dy.ravel(), dy.ravel() ** 2,
                  dx.ravel(), dy.ravel(), np.ones(9)], axis=1)
    c = np.linalg.lstsq(a, patch.ravel(), rcond=None)[0]
    hess = np.array([[2 * c[0], c[1]], [c[1], 2 * c[2]]])
    off = np.zeros(2)
    if np.linalg.det(hess) > 0 and hess[0, 0] < 0:
        off = np.linalg.solve(hess, -c[3:5])
    off = np.clip(off, -1.0, 1.0)
    return np.array([cx + off[0], cy + off[1]]), float(win.max())


def _light_mask(image, spec, tol=0.3):
    pal = np.asarray(spec.light_colors)
    d = np.linalg.norm(image[:, :, None, :] - pal[None, None], axis=-1)
    return d.min(axis=-1) < tol


def _square_agreement(image, spec, h):
    centers, rr, cc = spec.square_centers()
    try:
        pts = apply_homography(h, centers)
    except Exception:
        return 0.0
    height, width = image.shape[:2]
    ix = np.round(pts[:, 0]).astype(int)
    iy = np.round(pts[:, 1]).astype(int)
    ok = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    if not ok.all():
        return 0.0
    rgb = image[iy, ix]
    want, _ = spec.color_at(centers[:, 0], centers[:, 1])
    return float(np.mean(np.linalg.norm(rgb - want, axis=1) < 0.3))


def _affine_seed(pts, spec):
    mu, cov = pts.mean(axis=0), np.cov(pts.T, bias=True)
    mu0, cov0 = spec.light_moments()
    vals, vecs = np.linalg.eigh(cov)
    major, minor = vecs[:, 1], vecs[:, 0]
    if major[0] < 0:
        major = -major
    # right-handed frame: minor axis points "down" (+y) relative to major
    if major[0] * minor[1] - major[1] * minor[0] < 0:
        minor = -minor
    sx = np.sqrt(vals[1] / cov0[0, 0])
    sy = np.sqrt(vals[0] / cov0[1, 1])
    lin = np.stack([major * sx, minor * sy], axis=1)
    t = mu - lin @ mu0
    return Homography(np.array([[lin[0, 0], lin[0, 1], t[0]],
                                [lin[1, 0], lin[1, 1], t[1]],
                                [0, 0, 1]]))


def _lattice_fit(light, spec, h):
    """Re-fit ``h`` from light-square blobs placed on the checkerboard lattice.

    Light squares touch only diagonally, so each blob's nearest neighbours sit
    one step along a diagonal. Walking that neighbour graph assigns integer
    square coordinates without trusting the global seed beyond its rotation.
    """
    labels, n = ndimage.label(light)
    if n < 4:
        return h
    blobs = np.array(ndimage.center_of_mass(light, labels, np.arange(1, n + 1)))[:, ::-1]
    d = np.linalg.norm(blobs[:, None] - blobs[None], axis=2)
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    m = h.matrix
    rot = np.arctan2(m[1, 0], m[0, 0])
    steps = {0: (1, 1), 1: (-1, 1), 2: (-1, -1), 3: (1, -1)}
    coords = {0: (0, 0)}
    queue = [0]
    while queue:
        i = queue.pop(0)
        for j in np.nonzero(d[i] < 1.2 * nn[i])[0]:
            v = blobs[j] - blobs[i]
            ang = np.arctan2(v[1], v[0]) - rot - np.pi / 4
            step = steps[int(np.round(ang / (np.pi / 2))) % 4]
            cand = (coords[i][0] + step[0], coords[i][1] + step[1])
            if j in coords:
                if coords[j] != cand:
                    return h
                continue
            coords[int(j)] = cand
            queue.append(int(j))
    idx = sorted(coords)
    cr = np.array([coords[i] for i in idx])
    best = None
    for dc in range(-cr[:, 0].max(), spec.cols - cr[:, 0].min()):
        for dr in range(-cr[:, 1].max(), spec.rows - cr[:, 1].min()):
            c, r = cr[:, 0] + dc, cr[:, 1] + dr
            fits = (c >= 0) & (c < spec.cols) & (r >= 0) & (r < spec.rows) & ((c + r) % 2 == 0)
            if fits.all():
                if best is not None:
                    return h  # ambiguous placement
                best = (c, r)
    if best is None or len(idx) < 4:
        return h
    c, r = best
    plane = np.stack([spec.origin[0] + (c + 0.5) * spec.square,
                      spec.origin[1] + (r + 0.5) * spec.square], axis=1)
    try:
        return estimate_homography_dlt(CorrespondenceSet(blobs[idx], plane))
    except DegenerateConfigurationError:
        return h


def detect_marker(image, spec=None, iterations=3, min_confidence=0.8):
    """Locate the inner corners of the checkerboard in a rendered scene.

    Returns a :class:`MarkerDetection` whose corners are row-major in marker
    coordinates. Raises :class:`MarkerNotFoundError` when nothing consistent
    with the pattern is found.
    """
    spec = spec or MarkerSpec()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) color image, got {image.shape}")
    light = _light_mask(image, spec)
    if light.sum() < 4:
        raise MarkerNotFoundError("no marker-colored pixels", 0.0)
    # keep the densest cluster of light squares
    grow = max(int(round(spec.square)), 1)
    labels, n = ndimage.label(ndimage.binary_dilation(light, iterations=grow))
    sizes = ndimage.sum(light, labels, index=np.arange(1, n + 1))
    keep = (labels == 1 + int(np.argmax(sizes))) & light
    ys, xs = np.nonzero(keep)
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    if len(pts) < 4:
        raise MarkerNotFoundError("marker cluster too small", 0.0)

    gray = image @ np.array([0.299, 0.587, 0.114])
    response = corner_response(gray)
    grid = spec.inner_corners()
    try:
        h = _affine_seed(pts, spec)
    except DegenerateConfigurationError:
        raise MarkerNotFoundError("marker cluster is degenerate", 0.0) from None
    h = _lattice_fit(keep, spec, h)
    best = 0.0
    corners = None
    for _ in range(iterations):
        guess = apply_homography(h, grid)
        scale = np.sqrt(abs(np.linalg.det(h.matrix[:2, :2])))
        radius = max(0.3 * spec.square * scale, 1.0)
        refined = []
        for g in guess:
            p, _strength = refine_corner(response, g, radius)
            if p is None:
                raise MarkerNotFoundError("predicted corner outside image", best)
            refined.append(p)
        corners = np.array(refined)
        try:
            h = estimate_homography_dlt(CorrespondenceSet(corners, grid))
        except DegenerateConfigurationError:
            raise MarkerNotFoundError("refined corners are degenerate", best) from None
        best = max(best, _square_agreement(image, spec, h))
    confidence = _square_agreement(image, spec, h)
    if confidence < min_confidence:
        raise MarkerNotFoundError("square colors do not match the pattern", max(best, confidence))
    return MarkerDetection(corners, confidence, h)
