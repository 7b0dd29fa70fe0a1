"""Generators (U-Net and plain encoder-decoder), the patch discriminator and the losses.

Both generators share one layer layout. Each encoder level halves the extent
with a 4x4 stride-2 convolution; each decoder level doubles it with the
transposed convolution. The U-Net concatenates the encoder activation of the
matching resolution onto every decoder input; the encoder-decoder does not.
The stochastic input is realized as dropout in the innermost decoder levels.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from energygan import functional as F
from energygan.errors import ConfigError, DimensionError
from energygan.tensor import Parameter, Tensor, clip, log, mean, tabs, where, square, sub

INIT_STD = 0.02
LOSS_KINDS = ("l1", "l2", "smoothl1-paper", "smoothl1-std")
_LOSS_ALIASES = {
    "L1": "l1", "L2": "l2", "SmoothL1_paper": "smoothl1-paper",
    "SmoothL1_standard": "smoothl1-std", "smoothl1-standard": "smoothl1-std",
}
GENERATOR_KINDS = ("unet", "encoder_decoder")
LOG_EPS = 1e-8


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "unet"
    depth: int = 4
    base_channels: int = 16
    dropout_rate: float = 0.5
    dropout_levels: int = 2
    input_channels: int = 3
    output_channels: int = 1
    max_multiplier: int = 4

    def __post_init__(self):
        if self.kind == "encdec":
            object.__setattr__(self, "kind", "encoder_decoder")
        if self.kind not in GENERATOR_KINDS:
            raise ConfigError(f"generator kind must be one of {GENERATOR_KINDS}, got {self.kind!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    def channels(self):
        """Output channels of each encoder level."""
        return [self.base_channels * min(2**i, self.max_multiplier) for i in range(self.depth)]

    def check_extent(self, height, width):
        step = 2**self.depth
        if height % step or width % step:
            raise ConfigError(f"extent {height}x{width} is not divisible by 2^{self.depth}={step}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    patch_levels: int = 3
    base_channels: int = 16
    input_channels: int = 4
    max_multiplier: int = 8


class Model:
    """Ordered parameters plus non-trained buffers (running statistics)."""

    def __init__(self):
        self.params = OrderedDict()
        self.buffers = OrderedDict()

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def _conv(self, name, weight_shape, rng, out_channels, weight=None):
        w = weight if weight is not None else rng.normal(0.0, INIT_STD, size=weight_shape)
        self.params[f"{name}.weight"] = Parameter(np.asarray(w, dtype=np.float32))
        self.params[f"{name}.bias"] = Parameter(np.zeros(out_channels, dtype=np.float32))

    def _norm(self, name, channels):
        self.params[f"{name}.gamma"] = Parameter(np.ones(channels, dtype=np.float32))
        self.params[f"{name}.beta"] = Parameter(np.zeros(channels, dtype=np.float32))
        self.buffers[f"{name}.running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers[f"{name}.running_var"] = np.ones(channels, dtype=np.float32)

    def apply_norm(self, name, x, mode):
        return F.norm2d(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"], mode,
                        self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"])

    def state(self):
        """Flat name -> array mapping of parameters, Adam moments and buffers."""
        out = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.data
            out[f"{name}#adam_m"] = p.adam_m
            out[f"{name}#adam_v"] = p.adam_v
        out.update(self.buffers)
        return out

    def step_counts(self):
        return {name: p.step_count for name, p in self.params.items()}

    def load_state(self, buffers, step_counts=None):
        for name, p in self.params.items():
            for key, attr in ((name, "data"), (f"{name}#adam_m", "adam_m"), (f"{name}#adam_v", "adam_v")):
                arr = buffers[key]
                if arr.shape != p.shape:
                    raise DimensionError(f"{key}: stored {arr.shape} vs model {p.shape}")
                setattr(p, attr, np.array(arr, dtype=np.float32))
            if step_counts is not None:
                p.step_count = int(step_counts[name])
        for name in self.buffers:
            self.buffers[name] = np.array(buffers[name], dtype=np.float32)


class Generator(Model):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels()
        depth = cfg.depth
        skip = cfg.kind == "unet"
        prev = cfg.input_channels
        for i in range(depth):
            self._conv(f"enc{i}", (ch[i], prev, 4, 4), rng, ch[i])
            if 0 < i < depth - 1:
                self._norm(f"enc{i}.norm", ch[i])
            prev = ch[i]
        for i in reversed(range(depth)):
            out = ch[i - 1] if i > 0 else cfg.output_channels
            extra = ch[i] if i < depth - 1 else 0
            # draw the U-Net-shaped kernel for both kinds so equal seeds share weights
            w = rng.normal(0.0, INIT_STD, size=(ch[i] + extra, out, 4, 4))
            if not skip:
                w = w[:ch[i]]
            self._conv(f"dec{i}", w.shape, rng, out, weight=w)
            if i > 0:
                self._norm(f"dec{i}.norm", out)

    def forward(self, x, rng=None, noise_active=True, mode="train"):
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.input_channels:
            raise DimensionError(f"generator expects N x {cfg.input_channels} x H x W, got {x.shape}")
        cfg.check_extent(*x.shape[2:])
        p = self.params
        acts = []
        h = x
        for i in range(cfg.depth):
            h = F.conv2d(h, p[f"enc{i}.weight"], p[f"enc{i}.bias"], stride=2, padding=1)
            if 0 < i < cfg.depth - 1:
                h = self.apply_norm(f"enc{i}.norm", h, mode)
            h = F.leaky_relu(h, 0.2) if i < cfg.depth - 1 else F.relu(h)
            acts.append(h)
        for i in reversed(range(cfg.depth)):
            if i < cfg.depth - 1 and cfg.kind == "unet":
                h = F.concat_channels(h, acts[i])
            h = F.conv2d_transpose(h, p[f"dec{i}.weight"], p[f"dec{i}.bias"], stride=2, padding=1)
            if i == 0:
                return F.tanh(h)
            h = self.apply_norm(f"dec{i}.norm", h, mode)
            if i >= cfg.depth - cfg.dropout_levels and noise_active and cfg.dropout_rate > 0:
                h = F.dropout(h, cfg.dropout_rate, rng, active=True)
            h = F.relu(h)

    __call__ = forward


class PatchDiscriminator(Model):
    """Scores overlapping patches of ``scene ++ energy`` as real (near 1) or generated."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        prev = cfg.input_channels
        for i in range(cfg.patch_levels):
            out = cfg.base_channels * min(2**i, cfg.max_multiplier)
            self._conv(f"conv{i}", (out, prev, 4, 4), rng, out)
            if i > 0:
                self._norm(f"conv{i}.norm", out)
            prev = out
        self._conv("head", (1, prev, 4, 4), rng, 1)

    def forward(self, x, y, mode="train"):
        h = F.concat_channels(x, y)
        p = self.params
        for i in range(self.cfg.patch_levels):
            h = F.conv2d(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=2, padding=1)
            if i > 0:
                h = self.apply_norm(f"conv{i}.norm", h, mode)
            h = F.leaky_relu(h, 0.2)
        return F.sigmoid(F.conv2d(h, p["head.weight"], p["head.bias"], stride=1, padding=1))

    __call__ = forward


def build_generator(cfg, rng):
    return Generator(cfg, rng)


def build_discriminator(cfg, rng):
    return PatchDiscriminator(cfg, rng)


def generator_forward(g, x, noise_active=True, rng=None, mode="train"):
    return g.forward(x, rng=rng, noise_active=noise_active, mode=mode)


# -- losses ----------------------------------------------------------------------
def loss_kind(name):
    kind = _LOSS_ALIASES.get(name, name)
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {name!r}")
    return kind


def conditional_distance(y, g, kind="smoothl1-paper"):
    """Mean elementwise distance between target ``y`` and generated ``g``.

    ``smoothl1-paper`` is ``d^2/2`` for ``|d| < 1`` and ``|d|`` otherwise, so it
    jumps by one half at ``|d| = 1``; ``smoothl1-std`` uses ``|d| - 1/2``.
    """
    kind = loss_kind(kind)
    if y.shape != g.shape:
        raise DimensionError(f"target {y.shape} vs generated {g.shape}")
    d = sub(y, g)
    if kind == "l2":
        return mean(square(d))
    a = tabs(d)
    if kind == "l1":
        return mean(a)
    inner = np.abs(d.data) < 1
    quad = square(d) * 0.5
    lin = a if kind == "smoothl1-paper" else a - 0.5
    return mean(where(inner, quad, lin))


def _safe_log(p):
    return log(clip(p, LOG_EPS, 1.0))


def d_loss_from_scores(p_real, p_fake):
    """``-(mean log D(real) + mean log(1 - D(fake)))`` with clamped logs."""
    return -(mean(_safe_log(p_real)) + mean(_safe_log(1.0 - p_fake)))


def g_adversarial_from_scores(p_fake, saturating=False):
    if saturating:
        return mean(_safe_log(1.0 - p_fake))
    return -mean(_safe_log(p_fake))


def discriminator_loss(d, x, y_real, y_fake, mode="train"):
    """Discriminator objective on one batch; ``y_fake`` is detached here."""
    y_fake = y_fake.detach() if isinstance(y_fake, Tensor) else Tensor(y_fake)
    return d_loss_from_scores(d(x, y_real, mode), d(x, y_fake, mode))


def generator_loss(d, g_out, x, y_real, kind="smoothl1-paper", lam=100.0, saturating=False,
                   mode="train"):
    """``(total, adversarial, conditional)`` with ``total = adversarial + lam * conditional``."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    adv = g_adversarial_from_scores(d(x, g_out, mode), saturating)
    cond = conditional_distance(y_real, g_out, kind)
    return adv + cond * lam, adv, cond


# -- value scaling ---------------------------------------------------------------
def normalize_scene(rgb):
    """``(N, H, W, 3)`` RGB in [0, 1] to ``(N, 3, H, W)`` in [-1, 1]."""
    return np.ascontiguousarray(np.moveaxis(np.asarray(rgb, dtype=np.float32), -1, 1) * 2 - 1)


def normalize_energy(w, e_max):
    """kcal raster(s) ``(N, H, W)`` to ``(N, 1, H, W)`` in [-1, 1]."""
    w = np.asarray(w, dtype=np.float32)
    return np.ascontiguousarray((w / np.float32(e_max) * 2 - 1)[:, None])


def denormalize_output(g_out, e_max):
    """Generator output in (-1, 1) to nonnegative kcal per pixel."""
    if not e_max > 0:
        raise ConfigError(f"e_max must be positive, got {e_max}")
    g = g_out.data if isinstance(g_out, Tensor) else np.asarray(g_out)
    return np.clip((g + 1) / 2, 0, 1) * e_max


def config_dict(cfg):
    return asdict(cfg)
