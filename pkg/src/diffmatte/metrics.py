"""SAD, MSE, Grad and Conn matting metrics over the trimap's unknown region.

Reported in the usual benchmark units: SAD, Grad and Conn divided by 1000,
MSE multiplied by 1000. Inputs are alpha grids in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from diffmatte.errors import DomainError

UNKNOWN = 0.5
GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_FLOOR = 0.15


@dataclass(frozen=True)
class MetricReport:
    sad: float
    mse: float
    grad: float
    conn: float


def _prepare(pred, gt, trimap):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    trimap = np.asarray(trimap)
    if not pred.shape == gt.shape == trimap.shape or pred.ndim != 2:
        raise DomainError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, trimap {trimap.shape}")
    return pred, gt, trimap == UNKNOWN


def sad(pred, gt, trimap) -> float:
    pred, gt, unknown = _prepare(pred, gt, trimap)
    return float(np.abs(pred - gt)[unknown].sum() / 1000.0)


def mse(pred, gt, trimap) -> float:
    pred, gt, unknown = _prepare(pred, gt, trimap)
    if not unknown.any():
        raise DomainError("MSE is undefined without unknown pixels")
    return float(((pred - gt)[unknown] ** 2).mean() * 1000.0)


@lru_cache(maxsize=None)
def gaussian_derivative_kernel(sigma: float = GRAD_SIGMA) -> np.ndarray:
    """x-derivative-of-Gaussian kernel truncated at 3 sigma, unit L2 norm."""
    half = math.ceil(3.0 * sigma)
    r = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(r**2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))
    dg = -r * g / sigma**2
    k = np.outer(g, dg)
    return k / np.sqrt(np.sum(k * k))


def gradient_magnitude(alpha: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    hx = gaussian_derivative_kernel(sigma)
    gx = ndimage.convolve(alpha, hx, mode="nearest")
    gy = ndimage.convolve(alpha, hx.T, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def grad_metric(pred, gt, trimap, sigma: float = GRAD_SIGMA) -> float:
    pred, gt, unknown = _prepare(pred, gt, trimap)
    diff = gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)
    return float((diff**2)[unknown].sum() / 1000.0)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of a boolean mask (empty if the mask is)."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == np.argmax(sizes)


def connectivity_levels(pred, gt, step: float = CONN_STEP) -> np.ndarray:
    """Per pixel, the highest threshold at which it still belongs to the shared largest component."""
    n = int(round(1.0 / step))
    thresholds = [i / n for i in range(n + 1)]
    level = np.full(pred.shape, -1.0)
    for i in range(1, n + 1):
        omega = largest_component((pred >= thresholds[i]) & (gt >= thresholds[i]))
        level[(level == -1.0) & ~omega] = thresholds[i - 1]
    level[level == -1.0] = 1.0
    return level


def conn_metric(pred, gt, trimap, step: float = CONN_STEP) -> float:
    pred, gt, unknown = _prepare(pred, gt, trimap)
    level = connectivity_levels(pred, gt, step)
    d_pred = pred - level
    d_gt = gt - level
    phi_pred = 1.0 - d_pred * (d_pred >= CONN_FLOOR)
    phi_gt = 1.0 - d_gt * (d_gt >= CONN_FLOOR)
    return float(np.abs(phi_pred - phi_gt)[unknown].sum() / 1000.0)


def evaluate(pred, gt, trimap) -> MetricReport:
    return MetricReport(
        sad=sad(pred, gt, trimap),
        mse=mse(pred, gt, trimap),
        grad=grad_metric(pred, gt, trimap),
        conn=conn_metric(pred, gt, trimap),
    )
