"""Procedural matting data: foregrounds with soft edges and strands, compositing, trimaps."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from diffmatte.errors import DomainError

UNKNOWN = 0.5
ALPHA_EPS = 1e-6
# trimap erosion radius range at 64 px crops
RADIUS_RANGE = (1, 8)


@dataclass
class SyntheticSample:
    foreground: np.ndarray  # H x W x 3
    background: np.ndarray  # H x W x 3
    alpha: np.ndarray  # H x W
    composite: np.ndarray  # H x W x 3
    trimap: np.ndarray  # H x W, values {0, 0.5, 1}

    @property
    def image(self) -> np.ndarray:
        return self.composite


@dataclass
class MattingSample:
    """Image, ground-truth alpha and trimap, e.g. as read back from disk."""

    image: np.ndarray
    alpha: np.ndarray
    trimap: np.ndarray
    name: str = ""


def composite(fg, bg, alpha) -> np.ndarray:
    """Blend ``alpha * fg + (1 - alpha) * bg`` per pixel and channel, clamped to [0, 1]."""
    fg, bg, alpha = np.asarray(fg), np.asarray(bg), np.asarray(alpha)
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise DomainError(f"shape mismatch: fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape}")
    a = alpha[..., None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth noise in [0, 1]: a random (cells+1)^2 lattice bilinearly upsampled to size x size."""
    lattice = rng.random((cells + 1, cells + 1))
    coords = np.linspace(0.0, cells, size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return ndimage.map_coordinates(lattice, [yy, xx], order=1)


def _soft_shape(rng, yy, xx, size):
    cy, cx = rng.uniform(0.3, 0.7, 2) * size
    ra, rb = rng.uniform(0.08, 0.22, 2) * size
    theta = rng.uniform(0, np.pi)
    power = 2.0 if rng.random() < 0.5 else rng.uniform(2.5, 5.0)
    feather = rng.uniform(0.5, 2.0)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / ra
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / rb
    r = (np.abs(u) ** power + np.abs(v) ** power) ** (1.0 / power)
    # distance outside the boundary, approximately in pixels
    dist = (r - 1.0) * min(ra, rb)
    return np.where(dist <= 0.0, 1.0, np.exp(-(dist**2) / (2 * feather**2))), (cy, cx, min(ra, rb))


def _segment_distance(yy, xx, p, q):
    d = q - p
    length2 = max(float(d @ d), 1e-12)
    s = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / length2, 0.0, 1.0)
    return np.hypot(yy - (p[0] + s * d[0]), xx - (p[1] + s * d[1]))


def _strand(rng, yy, xx, anchor):
    cy, cx, radius = anchor
    angle = rng.uniform(0, 2 * np.pi)
    point = np.array([cy + radius * np.sin(angle), cx + radius * np.cos(angle)])
    heading = angle
    dist = np.full(yy.shape, np.inf)
    for _ in range(rng.integers(4, 9)):
        heading += rng.normal(0.0, 0.4)
        step = rng.uniform(2.0, 5.0)
        nxt = point + step * np.array([np.sin(heading), np.cos(heading)])
        dist = np.minimum(dist, _segment_distance(yy, xx, point, nxt))
        point = nxt
    width = rng.uniform(0.4, 1.2)
    opacity = rng.uniform(0.3, 0.9)
    return opacity * np.exp(-(dist**2) / (2 * width**2))


def gen_foreground(rng: np.random.Generator, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Random foreground colours and an alpha matte with solid, soft and strand-like regions."""
    if size < 16 or size % 16:
        raise DomainError(f"size must be a positive multiple of 16, got {size}")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    while True:
        alpha = np.zeros((size, size))
        anchors = []
        for _ in range(rng.integers(1, 5)):
            shape, anchor = _soft_shape(rng, yy, xx, size)
            alpha = np.maximum(alpha, shape)
            anchors.append(anchor)
        if rng.random() < 0.7:
            for _ in range(rng.integers(2, 9)):
                hair = _strand(rng, yy, xx, anchors[rng.integers(len(anchors))])
                alpha = 1.0 - (1.0 - alpha) * (1.0 - hair)
        if rng.random() < 0.3:
            soft = (alpha > 0.0) & (alpha < 1.0)
            alpha = np.where(soft, alpha * (0.6 + 0.4 * value_noise(rng, size, 6)), alpha)
        alpha[alpha < 1e-3] = 0.0
        alpha[alpha > 1.0 - 1e-3] = 1.0
        if alpha.min() == 0.0 and alpha.max() == 1.0:
            break
    base = rng.random(3)
    texture = np.stack([value_noise(rng, size, 4) for _ in range(3)], axis=-1)
    fg = np.clip(base + 0.3 * (texture - 0.5), 0.0, 1.0)
    return fg, alpha


def gen_background(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Linear colour gradient plus value noise."""
    c0, c1 = rng.random(3), rng.random(3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    ramp = np.clip(0.5 + (xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle), 0.0, 1.0)[..., None]
    noise = np.stack([value_noise(rng, size, 8) for _ in range(3)], axis=-1)
    return np.clip((1 - ramp) * c0 + ramp * c1 + 0.3 * (noise - 0.5), 0.0, 1.0)


def _erode(mask: np.ndarray, radius: int) -> np.ndarray:
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_erosion(mask, structure=structure, border_value=1)


def make_trimap(alpha: np.ndarray, kernel_radius: int | None = None, rng=None) -> np.ndarray:
    """Erode the certain-foreground and certain-background masks; the rest is unknown.

    With ``kernel_radius`` None the radius is drawn from ``RADIUS_RANGE``.
    """
    if kernel_radius is None:
        rng = np.random.default_rng() if rng is None else rng
        kernel_radius = int(rng.integers(RADIUS_RANGE[0], RADIUS_RANGE[1] + 1))
    if kernel_radius < 1:
        raise DomainError(f"kernel radius must be >= 1, got {kernel_radius}")
    alpha = np.asarray(alpha)
    fg = _erode(alpha >= 1.0 - ALPHA_EPS, kernel_radius)
    bg = _erode(alpha <= ALPHA_EPS, kernel_radius)
    trimap = np.full(alpha.shape, UNKNOWN)
    trimap[fg] = 1.0
    trimap[bg] = 0.0
    return trimap


def is_degenerate(trimap: np.ndarray) -> bool:
    """True when the trimap has no unknown pixel and is unusable for training."""
    return not np.any(trimap == UNKNOWN)


def gen_sample(rng: np.random.Generator, size: int = 64, radius_range=RADIUS_RANGE) -> SyntheticSample:
    while True:
        fg, alpha = gen_foreground(rng, size)
        bg = gen_background(rng, size)
        trimap = make_trimap(alpha, int(rng.integers(radius_range[0], radius_range[1] + 1)))
        if not is_degenerate(trimap):
            return SyntheticSample(fg, bg, alpha, composite(fg, bg, alpha), trimap)


def gen_dataset(count: int, size: int = 64, seed: int = 0) -> list[SyntheticSample]:
    """``count`` samples, each seeded independently from ``(seed, index)``."""
    return [gen_sample(np.random.default_rng([seed, i]), size) for i in range(count)]


def random_crop_flip(sample, crop: int, rng: np.random.Generator):
    """Crop every array field to ``crop`` x ``crop`` keeping an unknown pixel, then maybe flip.

    Up to ten random windows are tried; the centre window is the fallback.
    """
    h, w = sample.trimap.shape
    if crop > h or crop > w or crop < 1:
        raise DomainError(f"crop {crop} does not fit a {h}x{w} sample")
    for _ in range(10):
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        if np.any(sample.trimap[y : y + crop, x : x + crop] == UNKNOWN):
            break
    else:
        y, x = (h - crop) // 2, (w - crop) // 2
    flip = rng.random() < 0.5
    changes = {}
    for f in dataclasses.fields(sample):
        value = getattr(sample, f.name)
        if isinstance(value, np.ndarray):
            value = value[y : y + crop, x : x + crop]
            if flip:
                value = value[:, ::-1]
            changes[f.name] = np.ascontiguousarray(value)
    return dataclasses.replace(sample, **changes)
