"""``energygan`` command line: synth, build-pairs, train, eval, report.

Exit codes: 0 ok, 1 no build-pairs item succeeded, 2 usage or invalid
configuration, 3 I/O or file format failure, 4 training aborted on a
non-finite loss, 5 checkpoint/dataset incompatibility.
"""
import os

# single-threaded BLAS keeps training bit-reproducible; set before numpy loads
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import glob  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402

import numpy as np  # noqa: E402

from energygan import errors, formats  # noqa: E402

EXIT_OK, EXIT_NONE_BUILT, EXIT_USAGE, EXIT_IO, EXIT_ABORT, EXIT_COMPAT = 0, 1, 2, 3, 4, 5


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _split_arg(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("split must look like TRAIN,TEST (e.g. 0.9,0.1 or 6/7,1/7)")
    return tuple(p.strip() for p in parts)


def _extent_arg(text):
    parts = [int(v) for v in text.lower().replace("x", ",").split(",")]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) <= 0:
        raise argparse.ArgumentTypeError("extent must be N or HxW")
    return tuple(parts)


# -- synth -----------------------------------------------------------------------
def cmd_synth(args):
    from energygan.scenesynth import SceneSpec, build_dataset, per_base_plan

    spec = SceneSpec(seed=args.seed, extent=args.extent,
                     food_count_range=(args.food_min, args.food_max), occlusion=args.occlusion)
    plan = None if args.no_augment else per_base_plan(spec, args.augment_per_base)
    manifest = build_dataset(spec, args.n_base, plan, args.split, args.out,
                             log=_log if args.verbose else None)
    if args.export_raw:
        export_raw(spec, args.n_base, args.split, args.export_raw)
    counts = manifest["counts"]
    print(f"train {counts['train']} test {counts['test']} -> {os.path.join(args.out, 'manifest.json')}")
    return EXIT_OK


def export_raw(spec, n_base, split, out_dir):
    """Write un-augmented scenes, masks and kcal sidecars in the build-pairs input layout."""
    from energygan.scenesynth import sample_scene, split_bases

    os.makedirs(out_dir, exist_ok=True)
    test = split_bases(spec.seed, n_base, split)
    for base in range(n_base):
        s = sample_scene(spec, base)
        name = f"scene{base:04d}"
        formats.write_edm(os.path.join(out_dir, f"{name}_scene.edm"), s.scene)
        foods = []
        for k, ann in enumerate(s.annotations):
            mask = f"{name}_mask{k}.edm"
            formats.write_edm(os.path.join(out_dir, mask), ann.mask.astype(np.float32))
            foods.append({"label": ann.label, "energy_kcal": ann.energy_kcal, "mask": mask})
        sidecar = {"scene": f"{name}_scene.edm", "foods": foods,
                   "split": "test" if base in test else "train",
                   "homography": s.homography.tolist()}
        with open(os.path.join(out_dir, f"{name}.json"), "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)


# -- build-pairs -----------------------------------------------------------------
def cmd_build_pairs(args):
    from energygan.energymap import FoodAnnotation, PairedSample, build_energy_image
    from energygan.geometry import Homography
    from energygan.marker import detect_marker
    from energygan.scenesynth import write_pair

    sidecars = sorted(glob.glob(os.path.join(args.input, "*.json")))
    if not sidecars:
        _log(f"no *.json sidecars in {args.input}")
        return EXIT_USAGE
    os.makedirs(os.path.join(args.out, "pairs"), exist_ok=True)
    entries, failures = [], []
    e_max = 0.0
    for base, path in enumerate(sidecars):
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            with open(path, encoding="utf-8") as fh:
                meta = json.load(fh)
            root = os.path.dirname(path)
            scene = formats.read_edm(os.path.join(root, meta["scene"]), squeeze=False)
            anns = [FoodAnnotation(f["label"], formats.read_edm(os.path.join(root, f["mask"])) > 0.5,
                                   float(f["energy_kcal"])) for f in meta["foods"]]
            if args.homography == "identity":
                h = Homography.identity()
            elif args.homography == "sidecar":
                h = Homography(np.reshape(meta["homography"], (3, 3)))
            else:
                h = detect_marker(scene).homography
            energy = build_energy_image(scene, anns, h, resampling=args.resampling)
        except (errors.EnergyGanError, KeyError, ValueError) as exc:
            failures.append((name, f"{type(exc).__name__}: {exc}"))
            _log(f"skip {name}: {type(exc).__name__}: {exc}")
            continue
        sample = PairedSample(scene, energy, anns, h)
        entry = write_pair(args.out, name, sample, None)
        entry.update(split=meta.get("split", "train"), base_index=base)
        entries.append(entry)
        e_max = max(e_max, float(np.asarray(energy, dtype=np.float32).max()))
    if not entries:
        _log("every item failed")
        return EXIT_NONE_BUILT
    manifest = {
        "format_version": formats.MANIFEST_VERSION,
        "rng": "none (built from external annotations)",
        "spec": {"source": os.path.abspath(args.input), "homography": args.homography,
                 "resampling": args.resampling},
        "e_max": 1.05 * e_max,
        "counts": {k: sum(e["split"] == k for e in entries) for k in ("train", "test")},
        "failures": [{"item": n, "reason": r} for n, r in failures],
        "entries": entries,
    }
    formats.write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    print(f"built {len(entries)} pairs, skipped {len(failures)}")
    return EXIT_OK


# -- train / eval ----------------------------------------------------------------
def _train_config(args):
    from energygan.trainer import TrainConfig

    return TrainConfig(
        lr_alpha=args.lr, beta1=args.beta1, beta2=args.beta2, lam=args.lam,
        batch_size=args.batch, epochs=args.epochs, loss_kind=args.loss,
        generator_kind=args.generator, seed=args.seed, dropout_rate=args.dropout,
        eval_noise=not args.eval_deterministic, saturating_g=args.saturating,
        checkpoint_every=args.checkpoint_every)


def cmd_train(args):
    from energygan.trainer import fit

    cfg = _train_config(args)
    _, _, history = fit(cfg, args.manifest, args.out, resume=args.resume,
                        wall_clock=args.wall_clock, log=_log)
    if history:
        m = history[-1]
        print(f"epoch {m.epoch}: mean_signed {m.mean_signed_error:+.6f} mean_abs {m.mean_abs_error:.6f}")
    else:
        print("no epochs run; initial checkpoint written")
    return EXIT_OK


def cmd_eval(args):
    from energygan.rng import make_rng
    from energygan.trainer import Split, evaluate, load_checkpoint

    ids, scenes, energies, e_max = formats.load_split(args.manifest, args.split)
    if not ids:
        _log(f"split {args.split!r} is empty")
        return EXIT_USAGE
    split = Split.from_arrays(ids, scenes, energies, e_max)
    if args.oracle:
        g, preds = None, split.energy
    else:
        if not args.checkpoint:
            _log("--checkpoint is required unless --oracle is given")
            return EXIT_USAGE
        g, _, cfg, config = load_checkpoint(args.checkpoint, formats.manifest_digest(args.manifest))
        preds = None
    noise = not args.deterministic and (g is None or cfg.eval_noise)
    rng = make_rng(cfg.seed if g is not None else 0, "eval-cli", args.split)
    signed, absolute, rows = evaluate(g, split, e_max, noise, rng, predictions=preds)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "true_kcal", "est_kcal", "signed_error"])
            for sid, true, est, err in rows:
                w.writerow([sid, repr(true), repr(est), repr(err)])
    print(f"mean_signed {signed:+.6f} mean_abs {absolute:.6f} n {len(rows)}")
    return EXIT_OK


# -- report ----------------------------------------------------------------------
def cmd_report(args):
    from energygan import report
    from energygan.trainer import read_metrics

    os.makedirs(args.out, exist_ok=True)
    histories, labels = [], []
    for path in args.csv:
        try:
            histories.append(read_metrics(path))
        except ValueError as exc:
            _log(str(exc))
            return EXIT_USAGE
        labels.append(report.run_label(path))
    curve = os.path.join(args.out, "error_curves.png")
    report.plot_curves(histories, labels, curve)
    print(curve)
    if args.checkpoint:
        _triptychs(args)
    return EXIT_OK


def _triptychs(args):
    from energygan import report
    from energygan.models import denormalize_output
    from energygan.rng import make_rng
    from energygan.trainer import Split, load_checkpoint, predict

    if not args.manifest:
        raise errors.ConfigError("--manifest is required with --checkpoint")
    ids, scenes, energies, e_max = formats.load_split(args.manifest, args.split)
    g, _, cfg, _ = load_checkpoint(args.checkpoint, formats.manifest_digest(args.manifest))
    n = min(args.samples, len(ids))
    split = Split.from_arrays(ids[:n], scenes[:n], energies[:n], e_max)
    preds = denormalize_output(predict(g, split.x, make_rng(cfg.seed, "report"), cfg.eval_noise),
                               e_max)[:, 0]
    for i in range(n):
        path = os.path.join(args.out, f"triptych_{ids[i]}.png")
        report.save_png(path, report.triptych(scenes[i], energies[i], preds[i], e_max))
        print(path)


# -- parser ----------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="energygan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--n-base", type=int, default=70)
    s.add_argument("--extent", type=_extent_arg, default=(64, 64))
    s.add_argument("--augment-per-base", type=int, default=9)
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--split", type=_split_arg, default=("0.9", "0.1"))
    s.add_argument("--food-min", type=int, default=1)
    s.add_argument("--food-max", type=int, default=3)
    s.add_argument("--occlusion", action="store_true", help="allow overlapping foods")
    s.add_argument("--export-raw", metavar="DIR", help="also write build-pairs inputs")
    s.add_argument("--out", required=True)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("build-pairs", help="build energy images from scenes, masks and kcal sidecars")
    b.add_argument("input")
    b.add_argument("--out", required=True)
    b.add_argument("--homography", choices=("detect", "identity", "sidecar"), default="detect")
    b.add_argument("--resampling", choices=("bilinear", "nearest"), default="bilinear")
    b.set_defaults(func=cmd_build_pairs)

    t = sub.add_parser("train", help="train the conditional GAN")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--generator", choices=("unet", "encdec", "encoder_decoder"), default="unet")
    t.add_argument("--loss", choices=("l1", "l2", "smoothl1-paper", "smoothl1-std"), default="l1")
    t.add_argument("--lambda", dest="lam", type=float, default=100.0)
    t.add_argument("--lr", type=float, default=0.0002)
    t.add_argument("--beta1", type=float, default=0.5)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dropout", type=float, default=0.5)
    t.add_argument("--checkpoint-every", type=int, default=10)
    t.add_argument("--eval-deterministic", action="store_true", help="disable dropout noise at evaluation")
    t.add_argument("--saturating", action="store_true", help="use the log(1 - D) generator term")
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--wall-clock", action="store_true",
                   help="record elapsed seconds (otherwise 0, keeping the CSV byte-reproducible)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint")
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="per-sample CSV path")
    e.add_argument("--oracle", action="store_true", help="use ground truth as the prediction")
    e.add_argument("--deterministic", action="store_true", help="disable dropout noise")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="plot error curves and heatmap triptychs")
    r.add_argument("csv", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--manifest")
    r.add_argument("--split", default="test")
    r.add_argument("--samples", type=int, default=3)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.CompatibilityError as exc:
        _log(f"incompatible: {exc}")
        return EXIT_COMPAT
    except errors.NonFiniteLossError as exc:
        _log(f"training aborted: {exc}")
        return EXIT_ABORT
    except (errors.FormatError, OSError) as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except (errors.ConfigError, errors.EnergyGanError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
