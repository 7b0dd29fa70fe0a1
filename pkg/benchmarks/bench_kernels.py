"""Time the compiled kernels against their numpy twins.

Run from the repository root after building the extension::

    python3 benchmarks/bench_kernels.py [--repeat 7]

Every case first checks that both backends return bit-identical arrays. The
last case times one full generator + discriminator training step.
"""
import argparse
import os
import timeit

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402

from energygan import _backend  # noqa: E402
from energygan.geometry import Homography, warp_raster  # noqa: E402
from energygan.rng import make_rng  # noqa: E402
from energygan.trainer import Split, TrainConfig, init_models, train_epoch  # noqa: E402


def kernel_cases():
    rng = np.random.default_rng(0)
    # second generator encoder level at batch 4: 16 channels, 32 -> 16 after padding
    xp = rng.standard_normal((4, 16, 34, 34)).astype(np.float32)
    cols = _backend.im2col(xp, 4, 2, 16, 16)
    src = rng.standard_normal((64, 64, 3))
    ys, xs = np.mgrid[0:64, 0:64].astype(np.float64)
    h = Homography([[0.97, 0.05, 1.3], [-0.04, 1.02, -0.8], [3e-4, -2e-4, 1.0]])
    pts = h.apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    return [
        ("im2col 4x16x34x34 k4 s2", lambda: _backend.im2col(xp, 4, 2, 16, 16)),
        ("col2im 4x16x34x34 k4 s2", lambda: _backend.col2im(cols, 4, 2, 16, 16, xp.shape)),
        ("bilinear 64x64x3", lambda: _backend.sample_bilinear(src, pts[:, 0], pts[:, 1])),
        ("nearest 64x64x3", lambda: _backend.sample_nearest(src, pts[:, 0], pts[:, 1])),
        ("warp_raster 64x64", lambda: warp_raster(src[..., 0], h, (64, 64))),
    ]


def train_step_case():
    rng = make_rng(0, "bench")
    n = 4
    scenes = rng.uniform(0, 1, (n, 64, 64, 3))
    energy = rng.uniform(0, 1, (n, 64, 64))
    split = Split.from_arrays([str(i) for i in range(n)], scenes, energy, 1.0)
    cfg = TrainConfig(batch_size=n)
    g, d = init_models(cfg)

    def step():
        train_epoch(g, d, split, cfg, 1)
    return "train step (U-Net + D, batch 4)", step


def timed(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args()
    backends = _backend.available()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy kernels only")
    cases = kernel_cases() + [train_step_case()]
    print(f"{'case':36s}" + "".join(f"{b:>14s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, fn in cases:
        times, outs = [], []
        for b in backends:
            _backend.set_backend(b)
            outs.append(fn())
            times.append(timed(fn, args.repeat))
        if outs[0] is not None and len(outs) > 1:
            assert np.array_equal(outs[0], outs[1]), f"{name}: backends disagree"
        row = f"{name:36s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) > 1:
            row += f"  {times[backends.index('python')] / times[backends.index('cython')]:7.2f}x"
        print(row)
    _backend.set_backend("cython" if "cython" in backends else "python")


if __name__ == "__main__":
    main()
