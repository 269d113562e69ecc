"""Continuous-time training with the uniform-time-interval (UTI) self-aligned strategy."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from diffmatte.data.synth import random_crop_flip
from diffmatte.diffusion import forward_sample, standard_normal, to_model_space
from diffmatte.errors import DomainError, NumericError
from diffmatte.losses import LossBreakdown, LossWeights, matting_loss_grad
from diffmatte.net.checkpoint import save_checkpoint
from diffmatte.net.model import DecoderConfig, MattingModel, ModelConfig
from diffmatte.schedules import ScheduleSpec

log = logging.getLogger(__name__)

UTI_TARGETS = ("ground_truth", "prediction")


@dataclass
class TrainConfig:
    epochs: int = 300
    uti_start_epoch: int | None = None  # None: 75% of epochs
    batch_size: int = 4
    crop: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    augment: bool = True
    uti_target: str = "ground_truth"
    encoder_width: int = 0
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    decoder: DecoderConfig = field(default_factory=lambda: DecoderConfig(n_d=8, n_f=32))
    loss: LossWeights = field(default_factory=LossWeights)
    data_dir: str | None = None
    data_count: int = 8
    data_size: int = 64
    data_seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.uti_start_epoch is None:
            self.uti_start_epoch = int(0.75 * self.epochs)
        if self.epochs < 0 or not 0 <= self.uti_start_epoch <= self.epochs:
            raise DomainError(f"need 0 <= uti_start_epoch <= epochs, got {self.uti_start_epoch} / {self.epochs}")
        if self.crop < 16 or self.crop % 16:
            raise DomainError(f"crop must be a positive multiple of 16, got {self.crop}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.uti_target not in UTI_TARGETS:
            raise DomainError(f"uti_target must be one of {UTI_TARGETS}")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(decoder=self.decoder, encoder_width=self.encoder_width, schedule=self.schedule)


_NESTED = {"schedule": ScheduleSpec, "decoder": DecoderConfig, "loss": LossWeights}
_FLAT_ALIASES = {"data.dir": "data_dir", "data.count": "data_count", "data.size": "data_size", "data.seed": "data_seed"}


def _coerce(raw: str, annotation: str, name: str):
    raw = raw.strip()
    if "bool" in annotation:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise DomainError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if "tuple" in annotation:
        return None if raw.lower() == "none" else tuple(int(v) for v in raw.split(","))
    if raw.lower() == "none" and "None" in annotation:
        return None
    if annotation.startswith("int"):
        return int(raw)
    if annotation.startswith("float"):
        return float(raw)
    return raw


def parse_train_config(text: str, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (dotted keys for nested groups); unknown keys are errors."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DomainError(f"config line {lineno}: expected 'key = value', got {line!r}")
        pairs[key.strip()] = value.strip()
    pairs.update(overrides or {})

    top = {f.name: f for f in dataclasses.fields(TrainConfig)}
    flat, nested = {}, {group: {} for group in _NESTED}
    for key, value in pairs.items():
        key = _FLAT_ALIASES.get(key, key)
        group, dot, name = key.partition(".")
        try:
            if dot and group in _NESTED:
                fields = {f.name: f for f in dataclasses.fields(_NESTED[group])}
                if name not in fields:
                    raise DomainError(f"unknown config key {key!r}")
                nested[group][name] = _coerce(value, str(fields[name].type), key)
            elif key in top and key not in _NESTED:
                flat[key] = _coerce(value, str(top[key].type), key)
            else:
                raise DomainError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"bad value for {key!r}: {value!r}") from exc
    defaults = TrainConfig(epochs=1, uti_start_epoch=0)
    for group, cls in _NESTED.items():
        if nested[group]:
            flat[group] = dataclasses.replace(getattr(defaults, group), **nested[group])
    return TrainConfig(**flat)


def format_train_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            for sub in dataclasses.fields(value):
                v = getattr(value, sub.name)
                if isinstance(v, tuple):
                    v = ",".join(map(str, v))
                lines.append(f"{f.name}.{sub.name} = {v}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


class AdamW:
    """Adam with decoupled weight decay, one moment pair per named parameter."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            if m.shape != p.shape:
                raise DomainError(f"moment shape {m.shape} does not match parameter {name} {p.shape}")
            p *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sample_time(rng: np.random.Generator, size=None):
    """Training time drawn uniformly from [0, 1]."""
    return rng.uniform(0.0, 1.0, size)


def uti_times(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per sample, an interval ``delta ~ U(0, 1)`` and a time ``t ~ U(0, 1 - delta)``."""
    delta = rng.uniform(0.0, 1.0, size)
    t = rng.uniform(0.0, 1.0, size) * (1.0 - delta)
    return t, delta


def _batch_arrays(batch, dtype):
    image = np.stack([s.image.transpose(2, 0, 1) for s in batch]).astype(dtype)
    alpha = np.stack([s.alpha for s in batch])[:, None].astype(dtype)
    trimap = np.stack([s.trimap for s in batch])[:, None].astype(dtype)
    return image, alpha, trimap


def uti_sample(model: MattingModel, x0, image, trimap, rng, feats=None, t=None, delta=None):
    """Training input built by noising the frozen model's own estimate.

    ``x0``, ``image`` and ``trimap`` are NCHW batches (alpha space). The model
    predicts the clean matte from a sample noised to ``t + delta``; that
    prediction is noised again to ``t``. No gradients are recorded. Returns
    ``(x_train, t, x0_hat)``.
    """
    n = x0.shape[0]
    if t is None or delta is None:
        t, delta = uti_times(rng, n)
    t = np.asarray(t, dtype=np.float64).reshape(n)
    t_later = np.minimum(t + np.asarray(delta, dtype=np.float64).reshape(n), 1.0)
    spec = model.schedule
    dtype = model.dtype
    with model.no_grad():
        x_later = forward_sample(to_model_space(x0, spec.b), t_later, spec, standard_normal(rng, x0.shape, dtype))
        if feats is None:
            feats = model.encode(image, trimap)
        x0_hat = model.decode(x_later.astype(dtype), t_later, image, trimap, feats)
    x_train = forward_sample(to_model_space(x0_hat, spec.b), t, spec, standard_normal(rng, x0.shape, dtype))
    return x_train.astype(dtype), t, x0_hat


def train_step(
    model: MattingModel,
    batch,
    opt: AdamW,
    uti_enabled: bool,
    rng: np.random.Generator,
    weights: LossWeights = LossWeights(),
    uti_target: str = "ground_truth",
) -> LossBreakdown:
    """One optimizer update on ``batch`` (samples with image, alpha, trimap); returns the batch-mean losses."""
    if not batch:
        raise DomainError("empty batch")
    dtype = model.dtype
    image, x0, trimap = _batch_arrays(batch, dtype)
    n = len(batch)
    spec = model.schedule
    model.zero_grad()
    feats = model.encode(image, trimap)
    target = x0
    if uti_enabled:
        x_t, t, x0_hat = uti_sample(model, x0, image, trimap, rng, feats=feats)
        if uti_target == "prediction":
            target = x0_hat
    else:
        t = sample_time(rng, n)
        x_t = forward_sample(to_model_space(x0, spec.b), t, spec, standard_normal(rng, x0.shape, dtype))
    pred = model.decode(x_t, t, image, trimap, feats)

    parts = []
    dpred = np.zeros(pred.shape, dtype=np.float64)
    for i in range(n):
        breakdown, g = matting_loss_grad(pred[i, 0], target[i, 0], trimap[i, 0], weights)
        parts.append(breakdown)
        dpred[i, 0] = g / n
    mean = LossBreakdown(*(float(np.mean([getattr(p, k) for p in parts])) for k in ("sp_l1", "l2", "lap", "grad", "total")))
    if not math.isfinite(mean.total):
        raise NumericError(f"non-finite training loss {mean}")
    model.backward(dpred.astype(dtype))
    params = dict(model.named_parameters())
    grads = dict(model.named_grads())
    opt.step(params, grads)
    return mean


@dataclass
class TrainResult:
    model: MattingModel
    history: list[LossBreakdown]


def fit(cfg: TrainConfig, dataset, out_dir=None, on_epoch=None) -> TrainResult:
    """Train a fresh model on ``dataset`` for ``cfg.epochs`` epochs.

    UTI switches on at ``cfg.uti_start_epoch`` and stays on. With an output
    directory, ``last.dmck`` is rewritten after every epoch and ``final.dmck``
    written at the end.
    """
    if len(dataset) == 0:
        raise DomainError("dataset is empty")
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    rng = np.random.default_rng(cfg.seed)
    model = MattingModel(cfg.model_config, seed=cfg.seed)
    opt = AdamW(dict(model.named_parameters()), lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        uti = epoch >= cfg.uti_start_epoch
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            if cfg.augment:
                batch = [random_crop_flip(s, cfg.crop, rng) for s in batch]
            losses.append(train_step(model, batch, opt, uti, rng, cfg.loss, cfg.uti_target))
        epoch_loss = LossBreakdown(
            *(float(np.mean([getattr(l, k) for l in losses])) for k in ("sp_l1", "l2", "lap", "grad", "total"))
        )
        history.append(epoch_loss)
        log.info("epoch %d/%d uti=%s loss=%.5f", epoch + 1, cfg.epochs, uti, epoch_loss.total)
        if out_dir is not None:
            save_checkpoint(model, Path(out_dir) / "last.dmck")
        if on_epoch is not None:
            on_epoch(epoch, model, epoch_loss)
    if out_dir is not None:
        save_checkpoint(model, Path(out_dir) / "final.dmck")
    return TrainResult(model, history)
