"""Diffusion decoder, reference encoder and the combined matting model."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from diffmatte.errors import DomainError
from diffmatte.net.layers import (
    Conv2d,
    Module,
    Sigmoid,
    SiLU,
    TimeEmbedding,
    upsample2,
    upsample2_backward,
)
from diffmatte.schedules import ScheduleSpec

# noisy alpha (1) + RGB (3) + trimap (1)
DECODER_INPUT_CHANNELS = 5
ENCODER_INPUT_CHANNELS = 4


@dataclass(frozen=True)
class DecoderConfig:
    n_c: int = DECODER_INPUT_CHANNELS
    n_f: int = 32
    n_d: int = 32
    feature_stride: int = 16
    time_features: str = "linear"
    # raw channel lists; None derives them from n_d and feature_stride
    down_channels: tuple[int, ...] | None = None
    up_channels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_d < 1 or self.n_c < 1 or self.n_f < 1:
            raise DomainError("n_d, n_c and n_f must all be >= 1")
        if self.feature_stride not in (16, 32):
            raise DomainError(f"feature_stride must be 16 or 32, got {self.feature_stride}")
        if self.time_features not in ("linear", "sinusoidal"):
            raise DomainError(f"unknown time featurization {self.time_features!r}")
        down, up = self.down_list(), self.up_list()
        if len(up) != len(down) + 1 or 2 ** len(up) != self.feature_stride:
            raise DomainError(
                f"channel lists {down} / {up} do not match feature stride {self.feature_stride}"
            )

    def down_list(self) -> tuple[int, ...]:
        if self.down_channels is not None:
            return tuple(self.down_channels)
        nd = self.n_d
        extra = (4 * nd,) if self.feature_stride == 32 else ()
        return (nd, 2 * nd, 4 * nd) + extra

    def up_list(self) -> tuple[int, ...]:
        if self.up_channels is not None:
            return tuple(self.up_channels)
        nd = self.n_d
        extra = (8 * nd,) if self.feature_stride == 32 else ()
        return extra + (8 * nd, 4 * nd, 2 * nd, nd)


@dataclass(frozen=True)
class ModelConfig:
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    encoder_width: int = 0  # 0 means "same as decoder n_d"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)

    @property
    def enc_width(self) -> int:
        return self.encoder_width or self.decoder.n_d

    def to_items(self) -> list[tuple[str, str]]:
        """Flatten to dotted ``key = value`` pairs."""
        items = []
        for f in fields(self.decoder):
            value = getattr(self.decoder, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            items.append((f"decoder.{f.name}", "none" if value is None else str(value)))
        items.append(("encoder_width", str(self.encoder_width)))
        for f in fields(self.schedule):
            items.append((f"schedule.{f.name}", repr(getattr(self.schedule, f.name))))
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        dec, sched = {}, {}
        enc = 0
        for key, raw in items.items():
            group, _, name = key.partition(".")
            if group == "decoder":
                dec[name] = _parse_decoder_value(name, raw)
            elif group == "schedule":
                sched[name] = raw.strip("'\"") if name == "kind" else float(raw)
            elif key == "encoder_width":
                enc = int(raw)
            else:
                raise DomainError(f"unknown model config key {key!r}")
        try:
            return cls(decoder=DecoderConfig(**dec), encoder_width=enc, schedule=ScheduleSpec(**sched))
        except TypeError as exc:
            raise DomainError(str(exc)) from exc


def _parse_decoder_value(name: str, raw: str):
    if name == "time_features":
        return raw
    if name in ("down_channels", "up_channels"):
        return None if raw == "none" else tuple(int(v) for v in raw.split(","))
    if name in ("n_c", "n_f", "n_d", "feature_stride"):
        return int(raw)
    raise DomainError(f"unknown decoder config key {name!r}")


class Block(Module):
    """Residual block: conv -> +time -> SiLU -> conv -> SiLU -> conv, plus a 1x1 projected skip.

    A down block halves the resolution with its first conv; an up block doubles
    it (nearest) and concatenates the matching-resolution skip feature first.
    """

    def __init__(self, c_in: int, c_out: int, *, up: bool, c_skip: int = 0, time_features: str = "linear", rng=None):
        super().__init__()
        self.up, self.c_in, self.c_skip = up, c_in, c_skip
        stride = 1 if up else 2
        c_cat = c_in + c_skip
        self.conv1 = self.add_child("conv1", Conv2d(c_cat, c_out, 3, stride, rng))
        self.act1 = self.add_child("act1", SiLU())
        self.conv2 = self.add_child("conv2", Conv2d(c_out, c_out, 3, 1, rng))
        self.act2 = self.add_child("act2", SiLU())
        self.conv3 = self.add_child("conv3", Conv2d(c_out, c_out, 3, 1, rng, gain=0.1))
        self.proj = self.add_child("proj", Conv2d(c_cat, c_out, 1, stride, rng))
        self.temb = self.add_child("temb", TimeEmbedding(c_out, time_features, rng))

    def forward(self, x, t, skip=None):
        if self.up:
            x = upsample2(x)
            if skip is not None:
                x = np.concatenate([x, skip], axis=1)
        e = self.temb.forward(t)
        h = self.conv1.forward(x) + e[:, :, None, None]
        h = self.conv3.forward(self.act2.forward(self.conv2.forward(self.act1.forward(h))))
        return h + self.proj.forward(x)

    def backward(self, dy):
        """Return (grad wrt block input, grad wrt skip feature or None)."""
        dz = self.proj.backward(dy)
        dh = self.act1.backward(self.conv2.backward(self.act2.backward(self.conv3.backward(dy))))
        self.temb.backward(dh.sum(axis=(2, 3)))
        dz = dz + self.conv1.backward(dh)
        if not self.up:
            return dz, None
        dskip = dz[:, self.c_in :] if self.c_skip else None
        return upsample2_backward(dz[:, : self.c_in]), dskip


class Decoder(Module):
    """UNet-like diffusion decoder fed by the encoder's top-level features."""

    def __init__(self, cfg: DecoderConfig, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        down, up = cfg.down_list(), cfg.up_list()
        self.downs = []
        c_prev = cfg.n_c
        for i, c in enumerate(down):
            self.downs.append(self.add_child(f"down{i}", Block(c_prev, c, up=False, time_features=cfg.time_features, rng=rng)))
            c_prev = c
        # skips seen by the up path, deepest first; the last one is the raw input
        skip_channels = list(reversed(down)) + [cfg.n_c]
        self.ups = []
        c_prev = cfg.n_f
        for i, (c, cs) in enumerate(zip(up, skip_channels)):
            self.ups.append(self.add_child(f"up{i}", Block(c_prev, c, up=True, c_skip=cs, time_features=cfg.time_features, rng=rng)))
            c_prev = c
        self.head = self.add_child("head", Conv2d(c_prev, 1, 3, 1, rng, gain=0.1))
        self.squash = self.add_child("squash", Sigmoid())

    def check_shapes(self, x: np.ndarray, feats: np.ndarray) -> None:
        n, c, h, w = x.shape
        s = self.cfg.feature_stride
        if c != self.cfg.n_c:
            raise DomainError(f"decoder expects {self.cfg.n_c} input channels, got {c}")
        if h % s or w % s:
            raise DomainError(f"input size {h}x{w} is not divisible by feature stride {s}")
        expected = (n, self.cfg.n_f, h // s, w // s)
        if feats.shape != expected:
            raise DomainError(f"feature shape {feats.shape} does not match expected {expected}")

    def forward(self, x: np.ndarray, t: np.ndarray, feats: np.ndarray) -> np.ndarray:
        self.check_shapes(x, feats)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        skips = [x]
        h = x
        for block in self.downs:
            h = block.forward(h, t)
            skips.append(h)
        h = feats
        for block, skip in zip(self.ups, reversed(skips)):
            h = block.forward(h, t, skip)
        return self.squash.forward(self.head.forward(h))

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (grad wrt decoder input, grad wrt features)."""
        dh = self.head.backward(self.squash.backward(dy))
        dskips = []
        for block in reversed(self.ups):
            dh, dskip = block.backward(dh)
            dskips.append(dskip)
        dfeats = dh
        # dskips[0] belongs to the raw input, dskips[k + 1] to the output of down block k
        dh = dskips[-1]
        for k in range(len(self.downs) - 1, -1, -1):
            dh, _ = self.downs[k].backward(dh)
            dh = dh + dskips[k]
        return dh, dfeats


class Encoder(Module):
    """Tiny reference encoder: stride-2 conv + SiLU stages down to the feature stride."""

    def __init__(self, width: int, n_f: int, feature_stride: int = 16, c_in: int = ENCODER_INPUT_CHANNELS, rng=None):
        super().__init__()
        rng = np.random.default_rng(1) if rng is None else rng
        self.feature_stride = feature_stride
        widths = [width, 2 * width, 4 * width] + [4 * width] * (feature_stride == 32) + [n_f]
        self.stages = []
        c_prev = c_in
        for i, c in enumerate(widths):
            conv = self.add_child(f"conv{i}", Conv2d(c_prev, c, 3, 2, rng))
            act = self.add_child(f"act{i}", SiLU())
            self.stages.append((conv, act))
            c_prev = c

    def forward(self, x: np.ndarray) -> np.ndarray:
        h, w = x.shape[2:]
        if h % self.feature_stride or w % self.feature_stride:
            raise DomainError(f"input size {h}x{w} is not divisible by {self.feature_stride}")
        for conv, act in self.stages:
            x = act.forward(conv.forward(x))
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for conv, act in reversed(self.stages):
            dy = conv.backward(act.backward(dy))
        return dy


class MattingModel(Module):
    """Encoder run once per image plus a decoder run once per diffusion step.

    ``encoder_calls`` and ``decoder_calls`` count invocations for compute accounting.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        dcfg = self.config.decoder
        self.encoder = self.add_child(
            "encoder", Encoder(self.config.enc_width, dcfg.n_f, dcfg.feature_stride, rng=rng)
        )
        self.decoder = self.add_child("decoder", Decoder(dcfg, rng=rng))
        self.encoder_calls = 0
        self.decoder_calls = 0

    @property
    def schedule(self) -> ScheduleSpec:
        return self.config.schedule

    def with_schedule(self, schedule: ScheduleSpec) -> "MattingModel":
        self.config = replace(self.config, schedule=schedule)
        return self

    def reset_counters(self) -> None:
        self.encoder_calls = self.decoder_calls = 0

    def encode(self, image: np.ndarray, trimap: np.ndarray) -> np.ndarray:
        """Features from NCHW ``image`` (3 channels) and ``trimap`` (1 channel)."""
        self.encoder_calls += 1
        c = np.concatenate([image, trimap], axis=1).astype(self.dtype, copy=False)
        return self.encoder.forward(c)

    def decode(self, x_t, t, image, trimap, feats) -> np.ndarray:
        """Alpha prediction (N, 1, H, W) in [0, 1] from the noisy sample at time ``t``."""
        self.decoder_calls += 1
        x = np.concatenate([x_t, image, trimap], axis=1).astype(self.dtype, copy=False)
        return self.decoder.forward(x, t, feats)

    def forward(self, x_t, t, image, trimap) -> np.ndarray:
        return self.decode(x_t, t, image, trimap, self.encode(image, trimap))

    def backward(self, dalpha: np.ndarray) -> None:
        """Accumulate parameter gradients for the last recorded ``forward``."""
        _, dfeats = self.decoder.backward(dalpha)
        self.encoder.backward(dfeats)
