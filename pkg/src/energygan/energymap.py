"""Ground-truth energy distribution images and the energy error metric.

For every food the scene mask is rectified onto the marker plane, each
rectified pixel gets a weight that falls off with distance from the mask
centroid, the weights are projected back into the scene, and one scalar per
food rescales them so they sum to the food's known kcal. Foods are overlaid
by summation.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from energygan.errors import (
    CalibrationError,
    DimensionError,
    EmptyMaskError,
    UndefinedMetricError,
)
from energygan.geometry import Homography, apply_homography, warp_raster

MAX_RECTIFIED_SIDE = 4096


@dataclass
class FoodAnnotation:
    label: str
    mask: np.ndarray
    energy_kcal: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.ndim != 2 or not self.mask.any():
            raise EmptyMaskError(f"mask for {self.label!r} has no set pixels")
        if not self.energy_kcal > 0:
            raise ValueError(f"energy for {self.label!r} must be positive, got {self.energy_kcal}")


@dataclass
class RectifiedMask:
    """Support pixels ``(row, col)`` of a mask in rectified-plane pixels."""

    support: np.ndarray
    centroid: np.ndarray = field(init=False)
    phi: int = field(init=False)

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).reshape(-1, 2)
        if len(self.support) == 0:
            raise EmptyMaskError("rectified mask is empty")
        self.phi = len(self.support)
        self.centroid = self.support.mean(axis=0)

    @classmethod
    def from_raster(cls, mask):
        return cls(np.argwhere(np.asarray(mask) > 0.5))


@dataclass
class PairedSample:
    """Scene image, its energy distribution image, and what built it."""

    scene: np.ndarray
    energy: np.ndarray
    annotations: list
    homography: Homography

    def __post_init__(self):
        if self.scene.shape[:2] != self.energy.shape:
            raise DimensionError(
                f"scene {self.scene.shape[:2]} and energy {self.energy.shape} extents differ")


def rectified_scale_factors(mask, extent=None):
    """Distance-decay weights ``1 / (d + sqrt(phi))`` over the support, 0 elsewhere.

    ``d`` is the Euclidean distance from the support centroid and ``phi`` the
    support's pixel count. ``extent`` defaults to the support's bounding box
    from the origin.
    """
    sup = mask.support
    if extent is None:
        extent = tuple(sup.max(axis=0) + 1)
    out = np.zeros(extent, dtype=np.float64)
    dist = np.sqrt(((sup - mask.centroid) ** 2).sum(axis=1))
    out[sup[:, 0], sup[:, 1]] = 1.0 / (dist + np.sqrt(mask.phi))
    return out


def calibrate_rho(weights, energy_kcal, food_index=None):
    """Energy mapping coefficient: ``energy_kcal / sum(weights)``."""
    total = float(np.sum(weights))
    if not total > 0:
        raise CalibrationError("projected weights sum to zero (food out of frame?)", food_index)
    return energy_kcal / total


def apply_rho(weights, rho):
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    weights = np.asarray(weights, dtype=np.float64)
    return np.where(weights > 0, weights * rho, 0.0)


def rectify_mask(mask, h, margin=2, food_index=None):
    """Nearest-neighbour rectification of a scene mask.

    Returns ``(rectified_raster, to_scene)`` where ``to_scene`` maps rectified
    raster pixels to scene pixels.
    """
    rows, cols = np.nonzero(mask)
    plane = apply_homography(h.inverse(), np.stack([cols, rows], axis=1).astype(np.float64))
    lo = np.floor(plane.min(axis=0)) - margin
    hi = np.ceil(plane.max(axis=0)) + margin
    width, height = (hi - lo + 1).astype(int)
    if max(width, height) > MAX_RECTIFIED_SIDE:
        raise CalibrationError(f"rectified footprint {height}x{width} is too large", food_index)
    to_scene = h @ Homography.translation(lo[0], lo[1])
    rect = warp_raster(mask.astype(np.float64), to_scene.inverse(), (height, width), "nearest") > 0.5
    if not rect.any():
        # minified masks can fall between rectified samples
        ij = np.round(plane - lo).astype(int)
        rect[ij[:, 1], ij[:, 0]] = True
    return rect, to_scene


def food_energy_raster(annotation, h, resampling="bilinear", food_index=None):
    """Calibrated kcal-per-pixel raster of one food in scene coordinates.

    The result is supported on the food's scene mask and sums to its kcal.
    """
    rect, to_scene = rectify_mask(annotation.mask, h, food_index=food_index)
    w_hat = rectified_scale_factors(RectifiedMask.from_raster(rect), rect.shape)
    w_bar = warp_raster(w_hat, to_scene, annotation.mask.shape, resampling)
    w_bar = np.where(annotation.mask, w_bar, 0.0)
    rho = calibrate_rho(w_bar, annotation.energy_kcal, food_index)
    return apply_rho(w_bar, rho)


def build_energy_image(scene, annotations, h, resampling="bilinear"):
    """Overlay every food's calibrated raster into one energy image.

    ``scene`` only fixes the output extent. Overlapping foods add.
    """
    if not annotations:
        raise ValueError("need at least one food annotation")
    extent = np.asarray(scene).shape[:2]
    out = np.zeros(extent, dtype=np.float64)
    for k, ann in enumerate(annotations):
        if ann.mask.shape != extent:
            raise DimensionError(f"food {k} mask {ann.mask.shape} vs scene {extent}")
        out += food_energy_raster(ann, h, resampling, food_index=k)
    return out


def estimate_energy(pred):
    """Total kcal of an energy distribution image.

    The sum is exactly rounded, so it does not depend on pixel order.
    """
    return math.fsum(np.asarray(pred, dtype=np.float64).ravel().tolist())


def error_rate(pred, truth):
    """Signed relative error of the predicted total energy."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    total = estimate_energy(truth)
    if not total > 0:
        raise UndefinedMetricError("ground truth has zero energy")
    return (estimate_energy(pred) - total) / total


def aggregate_errors(errors):
    """``(mean_signed, mean_abs)`` over per-image signed error rates."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise UndefinedMetricError("no per-image errors to aggregate")
    return float(e.mean()), float(np.abs(e).mean())
