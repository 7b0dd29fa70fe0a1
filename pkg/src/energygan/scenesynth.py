"""Deterministic synthetic eating scenes with known energy ground truth.

A scene is drawn on the marker plane (a table, a plate, the checkerboard
marker and a few foods) and imaged through a sampled plane-to-scene
homography. Food outlines are analytic, so every food's plane area and hence
its kcal are known in closed form.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from energygan import formats, rng as rngmod
from energygan.energymap import FoodAnnotation, PairedSample, build_energy_image
from energygan.errors import ConfigError, EmptySampleError
from energygan.geometry import Homography, apply_homography
from energygan.marker import MarkerSpec

SHAPE_FAMILIES = ("ellipse", "blob", "stack")
AUGMENT_KINDS = ("rotate90", "rotate180", "rotate270", "flip_h", "flip_v", "crop")
GEOMETRIC_KINDS = AUGMENT_KINDS[:5]

TABLE_COLOR = (0.55, 0.45, 0.35)
PLATE_COLOR = (0.90, 0.91, 0.94)
RIM_COLOR = (0.78, 0.79, 0.84)


@dataclass(frozen=True)
class FoodClass:
    name: str
    energy_density: float
    base_color: tuple
    shape_family: str
    texture_amplitude: float = 0.2

    def __post_init__(self):
        if not self.energy_density > 0:
            raise ConfigError(f"{self.name}: energy_density must be positive")
        if self.shape_family not in SHAPE_FAMILIES:
            raise ConfigError(f"{self.name}: unknown shape family {self.shape_family!r}")
        if not 0 <= self.texture_amplitude <= 1:
            raise ConfigError(f"{self.name}: texture_amplitude must lie in [0, 1]")


# densities are kcal per plane unit squared
DEFAULT_CLASSES = (
    FoodClass("rice", 1.3, (0.97, 0.90, 0.70), "blob", 0.10),
    FoodClass("steak", 2.6, (0.48, 0.24, 0.16), "ellipse", 0.25),
    FoodClass("broccoli", 0.35, (0.22, 0.50, 0.18), "blob", 0.45),
    FoodClass("fries", 3.0, (0.93, 0.76, 0.30), "stack", 0.30),
    FoodClass("carrot", 0.45, (0.96, 0.52, 0.12), "ellipse", 0.15),
    FoodClass("pasta", 1.6, (0.80, 0.30, 0.18), "stack", 0.20),
)


@dataclass(frozen=True)
class SceneSpec:
    """Generator configuration. Lengths are plane units (scene pixels at unit scale)."""

    seed: int = 7
    extent: tuple = (64, 64)
    food_count_range: tuple = (1, 3)
    class_table: tuple = DEFAULT_CLASSES
    perspective_jitter: float = 0.0015
    marker_spec: MarkerSpec = field(default_factory=MarkerSpec)
    semi_axis_range: tuple = (5.0, 8.0)
    aspect_range: tuple = (0.7, 1.0)
    blob_amplitude: float = 0.15
    energy_jitter: tuple = (0.8, 1.2)
    plate_center: tuple = (37.0, 37.0)
    plate_radius: float = 21.0
    scale_range: tuple = (0.92, 1.04)
    rotation_deg: float = 8.0
    shift: float = 2.0
    occlusion: bool = False
    supersample: int = 3

    def __post_init__(self):
        lo, hi = self.food_count_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"food_count_range must satisfy 1 <= lo <= hi, got {self.food_count_range}")
        names = [c.name for c in self.class_table]
        if not names or len(set(names)) != len(names):
            raise ConfigError("class_table needs at least one class and distinct names")
        if min(self.extent) < 16:
            raise ConfigError(f"extent {self.extent} is too small for the marker")

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["class_table"] = tuple(FoodClass(**{**c, "base_color": tuple(c["base_color"])})
                                 for c in d["class_table"])
        m = d["marker_spec"]
        d["marker_spec"] = MarkerSpec(
            cols=m["cols"], rows=m["rows"], square=m["square"], origin=tuple(m["origin"]),
            dark_color=tuple(m["dark_color"]), light_colors=tuple(tuple(c) for c in m["light_colors"]))
        for key in ("extent", "food_count_range", "semi_axis_range", "aspect_range",
                    "energy_jitter", "plate_center", "scale_range"):
            d[key] = tuple(d[key])
        return cls(**d)


def expected_area(spec, food_class):
    """Mean plane area of one food of ``food_class`` under ``spec``'s size law."""
    lo, hi = spec.semi_axis_range
    mean_a2 = (lo * lo + lo * hi + hi * hi) / 3
    mean_ratio = sum(spec.aspect_range) / 2
    area = math.pi * mean_a2 * mean_ratio
    if food_class.shape_family == "blob":
        area *= 1 + spec.blob_amplitude**2 / 2
    return area


@dataclass
class _Food:
    cls: FoodClass
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    eps: float
    lobes: int
    phase: float
    tex: tuple

    @property
    def area(self):
        return math.pi * self.a * self.b * (1 + self.eps**2 / 2)

    @property
    def bound(self):
        return self.a * (1 + self.eps)

    def radial(self, px, py):
        """Normalized radius and a boolean coverage test at plane points."""
        dx, dy = px - self.cx, py - self.cy
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        u = (ca * dx + sa * dy) / self.a
        v = (-sa * dx + ca * dy) / self.b
        rho = np.sqrt(u * u + v * v)
        if self.eps:
            limit = 1 + self.eps * np.sin(self.lobes * np.arctan2(v, u) + self.phase)
        else:
            limit = 1.0
        return rho / limit, rho <= limit

    def color(self, px, py, rho):
        f, p1, p2, p3 = self.tex
        t = np.sin(f * px + p1) * np.sin(f * py + p2) + 0.5 * np.sin(2.3 * f * (px + py) + p3)
        shade = 1 + self.cls.texture_amplitude * t / 1.5
        if self.cls.shape_family == "stack":
            shade = shade * (0.7 + 0.4 * (1 - np.clip(rho, 0, 1) ** 2))
        return np.clip(np.asarray(self.cls.base_color) * shade[..., None], 0, 1)


def sample_homography(spec, rng, max_tries=200):
    """Bounded perspective perturbation of a similarity, keeping marker and plate in frame."""
    height, width = spec.extent
    center = np.array([(width - 1) / 2, (height - 1) / 2])
    ms = spec.marker_spec
    pcx, pcy = spec.plate_center
    r = spec.plate_radius
    keep = np.concatenate([
        ms.outer_corners() + np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]),
        [[pcx - r, pcy - r], [pcx + r, pcy - r], [pcx + r, pcy + r], [pcx - r, pcy + r]],
    ])
    for _ in range(max_tries):
        s = rng.uniform(*spec.scale_range)
        th = math.radians(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
        p = rng.uniform(-spec.perspective_jitter, spec.perspective_jitter, size=2)
        d = rng.uniform(-spec.shift, spec.shift, size=2)
        to_c = Homography.translation(-center[0], -center[1])
        persp = Homography([[1, 0, 0], [0, 1, 0], [p[0], p[1], 1]])
        sim = Homography([[s * math.cos(th), -s * math.sin(th), 0],
                          [s * math.sin(th), s * math.cos(th), 0], [0, 0, 1]])
        back = Homography.translation(center[0] + d[0], center[1] + d[1])
        h = back @ sim @ persp @ to_c
        q = apply_homography(h, keep)
        if q.min() >= 0.5 and q[:, 0].max() <= width - 1.5 and q[:, 1].max() <= height - 1.5:
            return h
    return Homography.identity()


def _place_foods(spec, rng):
    lo, hi = spec.food_count_range
    m = int(rng.integers(lo, hi + 1))
    pcx, pcy = spec.plate_center
    foods = []
    for _ in range(m):
        cls = spec.class_table[int(rng.integers(len(spec.class_table)))]
        a = rng.uniform(*spec.semi_axis_range)
        b = a * rng.uniform(*spec.aspect_range)
        angle = rng.uniform(0, math.pi)
        blob = cls.shape_family == "blob"
        eps = spec.blob_amplitude if blob else 0.0
        lobes = int(rng.integers(3, 7))
        phase = rng.uniform(0, 2 * math.pi)
        tex = (rng.uniform(0.6, 1.4), *rng.uniform(0, 2 * math.pi, size=3))
        food = _Food(cls, 0.0, 0.0, a, b, angle, eps, lobes, phase, tuple(float(t) for t in tex))
        reach = spec.plate_radius - food.bound - 1.5
        for _attempt in range(60):
            rr = reach * math.sqrt(rng.uniform())
            t = rng.uniform(0, 2 * math.pi)
            food.cx, food.cy = pcx + rr * math.cos(t), pcy + rr * math.sin(t)
            gap = 0.5 if spec.occlusion else 1.0
            if all(math.hypot(food.cx - o.cx, food.cy - o.cy)
                   >= gap * (food.bound + o.bound) + (0 if spec.occlusion else 1)
                   for o in foods):
                foods.append(food)
                break
    return foods


def _render(spec, h, foods):
    """Supersampled scene RGB plus the per-food pixel-center coverage masks."""
    height, width = spec.extent
    ss = spec.supersample
    hinv = h.inverse()
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    acc = np.zeros((height, width, 3))
    for dy in offs:
        for dx in offs:
            pts = apply_homography(hinv, np.stack([(xs + dx).ravel(), (ys + dy).ravel()], axis=1))
            acc += _plane_colors(spec, foods, pts[:, 0], pts[:, 1]).reshape(height, width, 3)
    scene = acc / ss**2
    pts = apply_homography(hinv, np.stack([xs.ravel(), ys.ravel()], axis=1))
    cover = [f.radial(pts[:, 0], pts[:, 1])[1].reshape(height, width) for f in foods]
    masks = []
    for k, c in enumerate(cover):
        later = np.zeros_like(c)
        for c2 in cover[k + 1:]:
            later |= c2
        masks.append(c & ~later)
    return scene, masks


def _plane_colors(spec, foods, px, py):
    grain = 1 + 0.06 * np.sin(0.9 * py + 0.3 * np.sin(0.2 * px))
    rgb = np.asarray(TABLE_COLOR) * grain[:, None]
    pcx, pcy = spec.plate_center
    d = np.hypot(px - pcx, py - pcy)
    rgb[d <= spec.plate_radius] = RIM_COLOR
    rgb[d <= spec.plate_radius - 1.5] = PLATE_COLOR
    mrgb, inside = spec.marker_spec.color_at(px, py)
    rgb[inside] = mrgb[inside]
    for food in foods:
        rho, cov = food.radial(px, py)
        if cov.any():
            rgb[cov] = food.color(px[cov], py[cov], rho[cov])
    return rgb


def sample_scene(spec, index):
    """Paired sample number ``index`` of ``spec``; a pure function of ``(seed, index)``."""
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    rng = rngmod.make_rng(spec.seed, "scene", index)
    h = sample_homography(spec, rng)
    foods = _place_foods(spec, rng)
    jitter = rng.uniform(*spec.energy_jitter, size=len(foods))
    scene, masks = _render(spec, h, foods)
    annotations = [
        FoodAnnotation(f.cls.name, m, float(f.cls.energy_density * f.area * j))
        for f, m, j in zip(foods, masks, jitter) if m.any()
    ]
    energy = build_energy_image(scene, annotations, h)
    return PairedSample(scene, energy, annotations, h)


# -- augmentation ----------------------------------------------------------------
@dataclass(frozen=True)
class AugmentationOp:
    """Joint raster transform. ``rect`` is ``(top, left, height, width)`` for crops.

    A padded crop re-centres the cropped window on a zero canvas of the
    original extent.
    """

    kind: str
    rect: tuple = None
    pad: bool = False

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigError(f"unknown augmentation {self.kind!r}")
        if self.kind == "crop" and (self.rect is None or len(self.rect) != 4):
            raise ConfigError("crop needs rect=(top, left, height, width)")

    def describe(self):
        out = {"kind": self.kind}
        if self.kind == "crop":
            out.update(rect=[int(v) for v in self.rect], pad=self.pad)
        return out


def _pixel_transform(op, extent):
    """Raster array function and the matching scene-to-scene pixel homography."""
    height, width = extent
    if op.kind == "rotate90":
        return (lambda a: np.rot90(a, 1)), Homography([[0, 1, 0], [-1, 0, width - 1], [0, 0, 1]])
    if op.kind == "rotate180":
        return (lambda a: np.rot90(a, 2)), Homography([[-1, 0, width - 1], [0, -1, height - 1], [0, 0, 1]])
    if op.kind == "rotate270":
        return (lambda a: np.rot90(a, 3)), Homography([[0, -1, height - 1], [1, 0, 0], [0, 0, 1]])
    if op.kind == "flip_h":
        return (lambda a: a[:, ::-1]), Homography([[-1, 0, width - 1], [0, 1, 0], [0, 0, 1]])
    if op.kind == "flip_v":
        return (lambda a: a[::-1]), Homography([[1, 0, 0], [0, -1, height - 1], [0, 0, 1]])
    top, left, ch, cw = (int(v) for v in op.rect)
    if top < 0 or left < 0 or ch < 1 or cw < 1 or top + ch > height or left + cw > width:
        raise ConfigError(f"crop rect {op.rect} is outside extent {extent}")
    if not op.pad:
        return (lambda a: a[top:top + ch, left:left + cw]), Homography.translation(-left, -top)
    oy, ox = (height - ch) // 2, (width - cw) // 2

    def crop_pad(a):
        out = np.zeros_like(a)
        out[oy:oy + ch, ox:ox + cw] = a[top:top + ch, left:left + cw]
        return out
    return crop_pad, Homography.translation(ox - left, oy - top)


def augment(sample, op):
    """Apply ``op`` identically to the scene, energy image and every mask."""
    fn, move = _pixel_transform(op, sample.energy.shape)
    scene = np.ascontiguousarray(fn(sample.scene))
    energy = np.ascontiguousarray(fn(sample.energy))
    annotations = []
    for ann in sample.annotations:
        mask = np.ascontiguousarray(fn(ann.mask))
        if op.kind == "crop":
            if not mask.any():
                continue
            kcal = float(energy[mask].sum())
            if not kcal > 0:
                continue
        else:
            kcal = ann.energy_kcal
        annotations.append(FoodAnnotation(ann.label, mask, kcal))
    if not annotations:
        raise EmptySampleError(f"{op.kind} {op.rect} removed every food")
    return PairedSample(scene, energy, annotations, move @ sample.homography)


def per_base_plan(spec, count, crop_fraction=(0.75, 0.9)):
    """Seeded plan of ``count`` ops per base scene: shuffled flips/rotations, then crops.

    Returns a callable ``plan(base_index, attempt) -> list of AugmentationOp``.
    """
    height, width = spec.extent

    def plan(base_index, attempt=0):
        rng = rngmod.make_rng(spec.seed, "augment", base_index, attempt)
        geo = [GEOMETRIC_KINDS[i] for i in rng.permutation(len(GEOMETRIC_KINDS))]
        ops = [AugmentationOp(k) for k in geo[:count]]
        for _ in range(count - len(ops)):
            ch = int(round(height * rng.uniform(*crop_fraction)))
            cw = int(round(width * rng.uniform(*crop_fraction)))
            top = int(rng.integers(0, height - ch + 1))
            left = int(rng.integers(0, width - cw + 1))
            ops.append(AugmentationOp("crop", (top, left, ch, cw), pad=True))
        return ops
    return plan


def parse_split(split):
    """``(train, test)`` fractions from numbers or strings such as ``"6/7"``."""
    train, test = (Fraction(str(v)) if not isinstance(v, Fraction) else v for v in split)
    if train < 0 or test < 0 or abs(float(train + test) - 1) > 1e-9:
        raise ConfigError(f"split fractions must be nonnegative and sum to 1, got {split}")
    return train, test


def split_bases(seed, n_base, split):
    """Set of base indices assigned to the test split."""
    _, test = parse_split(split)
    n_test = int(round(float(test) * n_base))
    perm = rngmod.make_rng(seed, "split").permutation(n_base)
    return set(int(i) for i in perm[:n_test])


def build_dataset(spec, n_base, augment_plan, split, out_dir, log=None):
    """Generate, augment, split by base scene and write a dataset directory.

    ``augment_plan`` is a list of ops applied to every base scene, or a
    callable from :func:`per_base_plan`. Returns the manifest dict.
    """
    if n_base < 1:
        raise ConfigError(f"n_base must be >= 1, got {n_base}")
    train_frac, test_frac = parse_split(split)
    test_bases = split_bases(spec.seed, n_base, split)
    pairs_dir = os.path.join(out_dir, "pairs")
    os.makedirs(pairs_dir, exist_ok=True)
    entries = []
    e_max = 0.0
    for base in range(n_base):
        sample = sample_scene(spec, base)
        variants = [(None, sample)] + _augmented(sample, base, augment_plan)
        for aug, (op, s) in enumerate(variants):
            entry = write_pair(out_dir, f"b{base:04d}_a{aug:02d}", s, op)
            entry.update(split="test" if base in test_bases else "train", base_index=base)
            entries.append(entry)
            e_max = max(e_max, float(np.asarray(s.energy, dtype=np.float32).max()))
        if log:
            log(f"base {base + 1}/{n_base}: {len(variants)} pairs")
    manifest = {
        "format_version": formats.MANIFEST_VERSION,
        "rng": rngmod.DESCRIPTION,
        "spec": spec.to_dict(),
        "n_base": n_base,
        "split": [str(train_frac), str(test_frac)],
        "e_max": 1.05 * e_max,
        "counts": {k: sum(e["split"] == k for e in entries) for k in ("train", "test")},
        "entries": entries,
    }
    formats.write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _augmented(sample, base, plan, max_attempts=10):
    if not plan:
        return []
    if not callable(plan):
        out = []
        for op in plan:
            try:
                out.append((op, augment(sample, op)))
            except EmptySampleError:
                continue
        return out
    ops = plan(base, 0)
    out = []
    for j, op in enumerate(ops):
        for attempt in range(max_attempts):
            try:
                out.append((op, augment(sample, op)))
                break
            except EmptySampleError:
                # redraw this crop from a fresh stream
                op = plan(base, attempt + 1)[j]
    return out


def write_pair(root, pair_id, sample, op):
    rel = lambda name: f"pairs/{pair_id}_{name}.edm"  # noqa: E731
    formats.write_edm(os.path.join(root, rel("scene")), sample.scene)
    formats.write_edm(os.path.join(root, rel("energy")), sample.energy)
    annotations = []
    for k, ann in enumerate(sample.annotations):
        formats.write_edm(os.path.join(root, rel(f"mask{k}")), ann.mask.astype(np.float32))
        annotations.append({"label": ann.label, "energy_kcal": ann.energy_kcal,
                            "mask_path": rel(f"mask{k}")})
    return {
        "id": pair_id,
        "augmentation": op.describe() if op is not None else {"kind": "none"},
        "scene_path": rel("scene"),
        "energy_path": rel("energy"),
        "annotations": annotations,
        "homography": sample.homography.tolist(),
    }
