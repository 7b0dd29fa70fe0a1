"""Alternating adversarial training, evaluation and checkpointing.

All randomness is drawn from streams keyed by ``(seed, purpose, epoch,
batch)``, so a resumed run needs no generator state beyond the epoch number.
"""
import csv
import io
import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from energygan import formats, serialization
from energygan.energymap import aggregate_errors, error_rate, estimate_energy
from energygan.errors import CompatibilityError, ConfigError, NonFiniteLossError
from energygan.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    d_loss_from_scores,
    denormalize_output,
    generator_loss,
    loss_kind,
    normalize_energy,
    normalize_scene,
)
from energygan.optim import adam_step, zero_grads
from energygan.rng import DESCRIPTION as RNG_DESCRIPTION, make_rng
from energygan.tensor import Tape, Tensor, no_grad

CSV_COLUMNS = ("epoch", "d_loss", "g_loss", "g_conditional",
               "mean_signed_error", "mean_abs_error", "wall_seconds")


@dataclass(frozen=True)
class TrainConfig:
    lr_alpha: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 100.0
    batch_size: int = 4
    epochs: int = 100
    loss_kind: str = "l1"
    generator_kind: str = "unet"
    seed: int = 0
    depth: int = 4
    base_channels: int = 16
    dropout_rate: float = 0.5
    disc_levels: int = 3
    disc_base_channels: int = 16
    eval_noise: bool = True
    saturating_g: bool = False
    checkpoint_every: int = 10

    def __post_init__(self):
        if not 0 < self.beta1 < self.beta2 < 1:
            raise ConfigError(f"need 0 < beta1 < beta2 < 1, got {self.beta1}, {self.beta2}")
        if not self.lr_alpha >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr_alpha}")
        if self.batch_size < 1 or self.epochs < 0 or self.checkpoint_every < 1:
            raise ConfigError("batch_size and checkpoint_every must be >= 1, epochs >= 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        object.__setattr__(self, "loss_kind", loss_kind(self.loss_kind))
        object.__setattr__(self, "generator_kind", self.generator_config().kind)

    def generator_config(self):
        return GeneratorConfig(kind=self.generator_kind, depth=self.depth,
                               base_channels=self.base_channels, dropout_rate=self.dropout_rate)

    def discriminator_config(self):
        return DiscriminatorConfig(patch_levels=self.disc_levels,
                                   base_channels=self.disc_base_channels)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EpochMetrics:
    epoch: int
    d_loss: float
    g_loss: float
    g_conditional: float
    mean_signed_error: float
    mean_abs_error: float
    wall_seconds: float = 0.0

    def row(self):
        return [self.epoch] + [repr(float(getattr(self, c))) for c in CSV_COLUMNS[1:]]


@dataclass
class Split:
    """Normalized arrays of one dataset split plus the raw kcal rasters."""

    ids: list
    x: np.ndarray
    y: np.ndarray
    energy: np.ndarray

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_arrays(cls, ids, scenes, energies, e_max):
        return cls(list(ids), normalize_scene(scenes), normalize_energy(energies, e_max),
                   np.asarray(energies, dtype=np.float32))


def load_dataset(manifest_path):
    """``(train, test, e_max)`` from a manifest on disk."""
    ids, scenes, energies, e_max = formats.load_split(manifest_path, "train")
    train = Split.from_arrays(ids, scenes, energies, e_max)
    ids, scenes, energies, _ = formats.load_split(manifest_path, "test")
    test = Split.from_arrays(ids, scenes, energies, e_max)
    return train, test, e_max


def init_models(cfg):
    g = build_generator(cfg.generator_config(), make_rng(cfg.seed, "init", "generator"))
    d = build_discriminator(cfg.discriminator_config(), make_rng(cfg.seed, "init", "discriminator"))
    return g, d


def _check_finite(epoch, batch, **losses):
    if not all(math.isfinite(v) for v in losses.values()):
        raise NonFiniteLossError(epoch, batch, losses)


def train_epoch(g, d, split, cfg, epoch):
    """One pass over ``split``: per batch one discriminator step, then one generator step.

    Returns epoch means ``(d_loss, g_loss, g_conditional)``.
    """
    order = make_rng(cfg.seed, "epoch", epoch).permutation(len(split))
    g_params, d_params = g.parameters(), d.parameters()
    sums = np.zeros(3)
    n_batches = 0
    for b, start in enumerate(range(0, len(split), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        x, y = Tensor(split.x[idx]), Tensor(split.y[idx])
        noise = make_rng(cfg.seed, "noise", epoch, b)
        with Tape():
            fake = g(x, rng=noise, noise_active=True, mode="train")

            zero_grads(d_params)
            ld = d_loss_from_scores(d(x, y), d(x, fake.detach()))
            _check_finite(epoch, b, d_loss=ld.item())
            ld.backward()
            adam_step(d_params, cfg.lr_alpha, cfg.beta1, cfg.beta2, cfg.adam_eps)

            zero_grads(g_params)
            for p in d_params:
                p.requires_grad = False
            try:
                total, adv, cond = generator_loss(d, fake, x, y, cfg.loss_kind, cfg.lam,
                                                  cfg.saturating_g)
                _check_finite(epoch, b, d_loss=ld.item(), g_loss=total.item(),
                              g_conditional=cond.item())
                total.backward()
            finally:
                for p in d_params:
                    p.requires_grad = True
            adam_step(g_params, cfg.lr_alpha, cfg.beta1, cfg.beta2, cfg.adam_eps)
        zero_grads(g_params)
        zero_grads(d_params)
        sums += (ld.item(), total.item(), cond.item())
        n_batches += 1
    return tuple(float(v) for v in sums / max(n_batches, 1))


def predict(g, x, rng=None, noise_active=True, batch_size=16, mode="eval"):
    """Normalized generator outputs for an ``(N, 3, H, W)`` array."""
    outs = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            outs.append(g(Tensor(x[start:start + batch_size]), rng=rng,
                          noise_active=noise_active, mode=mode).data)
    return np.concatenate(outs, axis=0)


def evaluate(g, split, e_max, noise_active=True, rng=None, predictions=None):
    """``(mean_signed, mean_abs, rows)`` with one ``(id, true_kcal, est_kcal, signed_error)`` per sample.

    ``predictions`` (kcal rasters) bypasses the generator.
    """
    if len(split) == 0:
        raise ConfigError("evaluation split is empty")
    if predictions is None:
        predictions = denormalize_output(predict(g, split.x, rng, noise_active), e_max)[:, 0]
    rows, errs = [], []
    for i, sid in enumerate(split.ids):
        err = error_rate(predictions[i], split.energy[i])
        rows.append((sid, estimate_energy(split.energy[i]), estimate_energy(predictions[i]), err))
        errs.append(err)
    mean_signed, mean_abs = aggregate_errors(errs)
    return mean_signed, mean_abs, rows


# -- checkpoints -----------------------------------------------------------------
def save_checkpoint(path, g, d, cfg, epoch, manifest_digest, e_max):
    buffers = {}
    for prefix, model in (("G", g), ("D", d)):
        for name, arr in model.state().items():
            buffers[f"{prefix}/{name}"] = arr
    config = {
        "epoch": epoch,
        "train_config": asdict(cfg),
        "generator_config": asdict(cfg.generator_config()),
        "discriminator_config": asdict(cfg.discriminator_config()),
        "step_counts": {"G": g.step_counts(), "D": d.step_counts()},
        "manifest_digest": manifest_digest,
        "e_max": e_max,
        "rng": RNG_DESCRIPTION,
    }
    tmp = path + ".tmp"
    serialization.save(tmp, buffers, config)
    os.replace(tmp, path)


def load_checkpoint(path, manifest_digest=None):
    """``(g, d, cfg, config)`` restored from ``path``.

    A given ``manifest_digest`` must match the one the checkpoint was trained on.
    """
    buffers, config = serialization.load(path)
    if manifest_digest is not None and config.get("manifest_digest") != manifest_digest:
        raise CompatibilityError(
            f"{path} was trained on dataset {config.get('manifest_digest')}, got {manifest_digest}")
    cfg = TrainConfig.from_dict(config["train_config"])
    g, d = init_models(cfg)
    for prefix, model in (("G", g), ("D", d)):
        plen = len(prefix) + 1
        model.load_state({k[plen:]: v for k, v in buffers.items() if k.startswith(prefix + "/")},
                         config["step_counts"][prefix])
    return g, d, cfg, config


# -- metrics CSV -----------------------------------------------------------------
def write_metrics(path, history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in history:
        w.writerow(m.row())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_metrics(path):
    """Parse a metrics CSV; malformed rows raise ``ValueError`` naming the row number."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: row 1: expected header {','.join(CSV_COLUMNS)}")
        history = []
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != len(CSV_COLUMNS):
                    raise ValueError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
                history.append(EpochMetrics(int(row[0]), *(float(v) for v in row[1:])))
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return history


# -- driver ----------------------------------------------------------------------
def fit(cfg, manifest_path, out_dir, resume=None, wall_clock=False, log=None):
    """Train for ``cfg.epochs`` epochs, evaluating on the test split after each.

    Writes ``metrics.csv``, ``ckpt_epochNNNN.kckp`` every ``checkpoint_every``
    epochs and at the end, and ``last.kckp`` after every epoch. With
    ``wall_clock=False`` the ``wall_seconds`` column is 0 so reruns are
    byte-identical. Returns ``(g, d, history)``.
    """
    log = log or (lambda msg: None)
    os.makedirs(out_dir, exist_ok=True)
    digest = formats.manifest_digest(manifest_path)
    train, test, e_max = load_dataset(manifest_path)
    if len(train) == 0:
        raise ConfigError("training split is empty")
    cfg.generator_config().check_extent(*train.x.shape[2:])
    metrics_path = os.path.join(out_dir, "metrics.csv")
    history = []
    if resume is not None:
        g, d, ckpt_cfg, config = load_checkpoint(resume, digest)
        if asdict(ckpt_cfg) | {"epochs": 0} != asdict(cfg) | {"epochs": 0}:
            raise CompatibilityError(f"{resume}: training configuration differs from the checkpoint")
        start = int(config["epoch"])
        if os.path.exists(metrics_path):
            history = [m for m in read_metrics(metrics_path) if m.epoch <= start]
    else:
        g, d = init_models(cfg)
        start = 0
    last_path = os.path.join(out_dir, "last.kckp")
    if start == 0:
        save_checkpoint(os.path.join(out_dir, "ckpt_epoch0000.kckp"), g, d, cfg, 0, digest, e_max)
        save_checkpoint(last_path, g, d, cfg, 0, digest, e_max)
    write_metrics(metrics_path, history)
    for epoch in range(start + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            d_loss, g_loss, g_cond = train_epoch(g, d, train, cfg, epoch)
        except NonFiniteLossError:
            log(f"aborting at epoch {epoch}; last good checkpoint is {last_path}")
            raise
        if len(test):
            signed, absolute, _ = evaluate(g, test, e_max, cfg.eval_noise,
                                           make_rng(cfg.seed, "eval", epoch))
        else:
            signed = absolute = float("nan")
        elapsed = time.perf_counter() - t0
        history.append(EpochMetrics(epoch, d_loss, g_loss, g_cond, signed, absolute,
                                    elapsed if wall_clock else 0.0))
        write_metrics(metrics_path, history)
        save_checkpoint(last_path, g, d, cfg, epoch, digest, e_max)
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            save_checkpoint(os.path.join(out_dir, f"ckpt_epoch{epoch:04d}.kckp"),
                            g, d, cfg, epoch, digest, e_max)
        log(f"epoch {epoch}: d {d_loss:.4f} g {g_loss:.4f} cond {g_cond:.4f} "
            f"signed {signed:+.4f} abs {absolute:.4f} ({elapsed:.1f}s)")
    return g, d, history
