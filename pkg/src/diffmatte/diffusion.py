"""Forward noising, the DDIM reverse step and the inference loops.

Alpha mattes live in [0, 1]. The diffusion runs in "model space", where a
matte is mapped to ``b * (2 * alpha - 1)``; the decoder always predicts alpha
and every conversion between the two spaces happens here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from diffmatte.errors import DomainError
from diffmatte.schedules import ScheduleSpec, gamma, make_time_grid

MODES = ("stochastic", "deterministic")
UNKNOWN = 0.5


def to_model_space(alpha, b: float):
    return b * (2.0 * np.asarray(alpha) - 1.0)


def from_model_space(x, b: float):
    if b <= 0:
        raise DomainError(f"input scale must be positive, got {b}")
    return np.clip((np.asarray(x) / b + 1.0) / 2.0, 0.0, 1.0)


def _per_sample(values, like: np.ndarray) -> np.ndarray:
    """Reshape a scalar or per-sample vector so it broadcasts over a batch."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape((-1,) + (1,) * (like.ndim - 1))


def forward_sample(x0, t, spec: ScheduleSpec, noise):
    """``sqrt(gamma(t)) * x0 + sqrt(1 - gamma(t)) * noise``; ``x0`` is already in model space.

    ``t`` may be a scalar or one time per leading-axis sample.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise DomainError(f"noise shape {noise.shape} does not match x0 shape {x0.shape}")
    g = _per_sample(gamma(spec, t), x0)
    out = np.sqrt(g) * x0 + np.sqrt(1.0 - g) * noise
    return out.astype(np.result_type(x0.dtype, noise.dtype), copy=False)


def standard_normal(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    return rng.standard_normal(shape).astype(dtype)


def ddim_step(x_t, x0_hat, t: float, t_prev: float, spec: ScheduleSpec, mode: str = "stochastic", rng=None):
    """Move the noisy sample from ``t`` to ``t_prev`` given the clean estimate ``x0_hat`` (alpha space).

    Stochastic mode re-noises the estimate with fresh Gaussian noise;
    deterministic mode re-uses the noise implied by ``x_t``.
    """
    if mode not in MODES:
        raise DomainError(f"unknown sampling mode {mode!r}")
    if not t > t_prev:
        raise DomainError(f"ddim_step needs t > t_prev, got t={t}, t_prev={t_prev}")
    x_t = np.asarray(x_t)
    m = to_model_space(np.clip(x0_hat, 0.0, 1.0), spec.b).astype(x_t.dtype)
    g_prev = gamma(spec, t_prev)
    if g_prev >= 1.0:
        return m
    if mode == "stochastic":
        rng = np.random.default_rng() if rng is None else rng
        eps = standard_normal(rng, x_t.shape, x_t.dtype)
    else:
        g = gamma(spec, t)
        if 1.0 - g <= 1e-12:
            return m
        eps = (x_t - np.sqrt(g) * m) / np.sqrt(1.0 - g)
    return (np.sqrt(g_prev) * m + np.sqrt(1.0 - g_prev) * eps).astype(x_t.dtype)


@dataclass
class SampleTrace:
    """Per-step clean estimates (time, alpha) and the final known-region-fixed matte."""

    steps: list[tuple[float, np.ndarray]] = field(default_factory=list)
    alpha: np.ndarray | None = None

    @property
    def predictions(self) -> list[np.ndarray]:
        return [a for _, a in self.steps]


def check_conditioning(image: np.ndarray, trimap: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise DomainError(f"image must be H x W x 3, got {image.shape}")
    if trimap.shape != image.shape[:2]:
        raise DomainError(f"trimap shape {trimap.shape} does not match image {image.shape[:2]}")
    if not np.all(np.isin(trimap, (0.0, UNKNOWN, 1.0))):
        raise DomainError("trimap values must be 0, 0.5 or 1")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DomainError("image values must lie in [0, 1]")


def apply_known_regions(alpha: np.ndarray, trimap: np.ndarray) -> np.ndarray:
    out = np.array(alpha, copy=True)
    out[trimap == 1.0] = 1.0
    out[trimap == 0.0] = 0.0
    return out


def _run(model, image, trimap, steps, mode, rng, gt_alpha=None) -> SampleTrace:
    if int(steps) != steps or steps < 1:
        raise DomainError(f"step count must be >= 1, got {steps!r}")
    if mode not in MODES:
        raise DomainError(f"unknown sampling mode {mode!r}")
    check_conditioning(image, trimap)
    spec = model.schedule
    dtype = model.dtype
    img = image.transpose(2, 0, 1)[None].astype(dtype)
    tri = trimap[None, None].astype(dtype)
    grid = make_time_grid(steps)
    feats = model.encode(img, tri)
    x = standard_normal(rng, tri.shape, dtype)
    trace = SampleTrace()
    x0_hat = None
    for t, t_prev in zip(grid[:-1], grid[1:]):
        x0_hat = model.decode(x, np.array([t]), img, tri, feats)
        trace.steps.append((float(t), x0_hat[0, 0].copy()))
        renoise_from = x0_hat if gt_alpha is None else gt_alpha[None, None]
        x = ddim_step(x, renoise_from, t, t_prev, spec, mode, rng)
    trace.alpha = apply_known_regions(x0_hat[0, 0], trimap)
    return trace


def sample(model, image: np.ndarray, trimap: np.ndarray, steps: int, mode: str = "stochastic", rng=None) -> SampleTrace:
    """Iteratively denoise from pure noise to an alpha matte in ``steps`` decoder passes.

    ``image`` is H x W x 3 and ``trimap`` H x W with values {0, 0.5, 1}. The
    encoder runs once; its features are reused by every decoder pass.
    """
    rng = np.random.default_rng() if rng is None else rng
    with model.no_grad():
        return _run(model, image, trimap, steps, mode, rng)


def consistent_sample(model, image, trimap, gt_alpha, steps: int, rng=None, mode: str = "stochastic") -> SampleTrace:
    """Like ``sample`` but every re-noising starts from ``gt_alpha`` instead of the prediction."""
    gt_alpha = np.asarray(gt_alpha)
    if gt_alpha.shape != trimap.shape:
        raise DomainError(f"ground truth shape {gt_alpha.shape} does not match trimap {trimap.shape}")
    rng = np.random.default_rng() if rng is None else rng
    with model.no_grad():
        return _run(model, image, trimap, steps, mode, rng, gt_alpha=gt_alpha)
