"""Error curves and scene / ground-truth / prediction heatmap triptychs.

Heatmaps use one fixed lookup table over ``[0, e_max]`` so images of
different runs are directly comparable and byte-reproducible. PNGs are for
viewing only; every number lives in the CSV and EDM files.
"""
import os

import numpy as np

# heat ramp anchors: (position, RGB)
LUT_ANCHORS = (
    (0.00, (0, 0, 0)),
    (0.25, (30, 25, 150)),
    (0.50, (200, 30, 80)),
    (0.75, (255, 150, 0)),
    (1.00, (255, 255, 230)),
)
UPSCALE = 4
GUTTER = 4


def heat_lut():
    """256 x 3 uint8 lookup table interpolated between :data:`LUT_ANCHORS`."""
    pos = np.array([a[0] for a in LUT_ANCHORS])
    rgb = np.array([a[1] for a in LUT_ANCHORS], dtype=np.float64)
    t = np.linspace(0, 1, 256)
    return np.stack([np.round(np.interp(t, pos, rgb[:, c])) for c in range(3)], axis=1).astype(np.uint8)


def heatmap(raster, e_max):
    """kcal raster to an 8-bit RGB image through the fixed lookup table."""
    idx = np.clip(np.asarray(raster, dtype=np.float64) / e_max, 0, 1) * 255
    return heat_lut()[np.round(idx).astype(np.int64)]


def scene_to_rgb8(scene):
    return np.round(np.clip(np.asarray(scene, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def triptych(scene, truth, pred, e_max):
    """Side-by-side ``scene | ground truth | prediction`` uint8 RGB array."""
    panels = [scene_to_rgb8(scene), heatmap(truth, e_max), heatmap(pred, e_max)]
    panels = [np.repeat(np.repeat(p, UPSCALE, axis=0), UPSCALE, axis=1) for p in panels]
    h = panels[0].shape[0]
    gap = np.full((h, GUTTER, 3), 255, dtype=np.uint8)
    return np.concatenate([panels[0], gap, panels[1], gap, panels[2]], axis=1)


def panel_slices(width):
    """Column slices of the three panels in a triptych of a ``width``-pixel raster."""
    w = width * UPSCALE
    return [slice(i * (w + GUTTER), i * (w + GUTTER) + w) for i in range(3)]


def save_png(path, rgb):
    from PIL import Image

    Image.fromarray(rgb, mode="RGB").save(path, format="PNG", optimize=False)


def run_label(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    if stem == "metrics":
        stem = os.path.basename(os.path.dirname(os.path.abspath(path))) or stem
    return stem


def plot_curves(histories, labels, path):
    """Mean-absolute and mean-signed error per epoch, one line per run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_abs, ax_signed) = plt.subplots(1, 2, figsize=(10, 4))
    for hist, label in zip(histories, labels):
        ep = [m.epoch for m in hist]
        ax_abs.plot(ep, [m.mean_abs_error for m in hist], label=label)
        ax_signed.plot(ep, [m.mean_signed_error for m in hist], label=label)
    ax_abs.set_title("mean absolute energy error rate")
    ax_signed.set_title("mean signed energy error rate")
    ax_signed.axhline(0.0, color="0.6", lw=0.8)
    for ax in (ax_abs, ax_signed):
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
