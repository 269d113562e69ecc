"""Matting losses on H x W alpha grids, each with its gradient wrt the prediction.

Every ``*_grad`` function returns ``(value, d value / d pred)``; the plain
names return only the value.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from diffmatte.errors import DomainError

UNKNOWN = 0.5
PYRAMID_LEVELS = 5
BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class LossWeights:
    sp_l1: float = 1.0
    l2: float = 1.0
    lap: float = 1.0
    grad: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    sp_l1: float
    l2: float
    lap: float
    grad: float
    total: float


def _check(pred, gt, trimap=None):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise DomainError(f"prediction {pred.shape} and ground truth {gt.shape} must be matching H x W grids")
    if trimap is not None and np.shape(trimap) != pred.shape:
        raise DomainError(f"trimap shape {np.shape(trimap)} does not match {pred.shape}")
    return pred, gt


def _masked_mean_abs(diff, mask):
    n = mask.sum()
    if n == 0:
        return 0.0, np.zeros_like(diff)
    return float(np.abs(diff[mask]).sum() / n), np.sign(diff) * mask / n


def separate_l1_grad(pred, gt, trimap):
    pred, gt = _check(pred, gt, trimap)
    diff = pred - gt
    unknown = np.asarray(trimap) == UNKNOWN
    v_u, g_u = _masked_mean_abs(diff, unknown)
    v_k, g_k = _masked_mean_abs(diff, ~unknown)
    return v_u + v_k, g_u + g_k


def l2_loss_grad(pred, gt, trimap):
    pred, gt = _check(pred, gt, trimap)
    diff = pred - gt
    unknown = np.asarray(trimap) == UNKNOWN
    n = unknown.sum()
    if n == 0:
        return 0.0, np.zeros_like(diff)
    return float((diff[unknown] ** 2).sum() / n), 2.0 * diff * unknown / n


def _forward_diffs(x):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    return dx, dy


def _forward_diffs_adjoint(gx, gy):
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


def gradient_loss_grad(pred, gt, trimap):
    """Mean over unknown pixels of |d/dx error| + |d/dy error| (forward differences, 0 on the last row/col)."""
    pred, gt = _check(pred, gt, trimap)
    unknown = np.asarray(trimap) == UNKNOWN
    n = unknown.sum()
    if n == 0:
        return 0.0, np.zeros_like(pred)
    ex, ey = _forward_diffs(pred - gt)
    value = float((np.abs(ex) + np.abs(ey))[unknown].sum() / n)
    return value, _forward_diffs_adjoint(np.sign(ex) * unknown / n, np.sign(ey) * unknown / n)


def _mirror(i: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i %= period
    return period - i if i >= n else i


@lru_cache(maxsize=None)
def _blur_matrix(n: int) -> np.ndarray:
    """1-D binomial blur with mirror boundaries as an n x n matrix."""
    m = np.zeros((n, n))
    for i in range(n):
        for k, w in zip(range(-2, 3), BINOMIAL):
            m[i, _mirror(i + k, n)] += w
    return m


@lru_cache(maxsize=None)
def _down_matrix(n: int) -> np.ndarray:
    return _blur_matrix(n)[::2]


@lru_cache(maxsize=None)
def _up_matrix(n_small: int) -> np.ndarray:
    # zero insertion followed by a blur with doubled gain
    insert = np.zeros((2 * n_small, n_small))
    insert[::2] = np.eye(n_small)
    return 2.0 * _blur_matrix(2 * n_small) @ insert


def _check_pyramid_dims(shape):
    div = 2 ** (PYRAMID_LEVELS - 1)
    if shape[0] % div or shape[1] % div:
        raise DomainError(f"laplacian loss needs dims divisible by {div}, got {shape}")


def laplacian_pyramid(x) -> list[np.ndarray]:
    """Band-pass levels (finest first) followed by the low-pass residual."""
    x = np.asarray(x, dtype=np.float64)
    _check_pyramid_dims(x.shape)
    levels = []
    g = x
    for _ in range(PYRAMID_LEVELS - 1):
        h, w = g.shape
        low = _down_matrix(h) @ g @ _down_matrix(w).T
        levels.append(g - _up_matrix(h // 2) @ low @ _up_matrix(w // 2).T)
        g = low
    levels.append(g)
    return levels


def reconstruct_pyramid(levels: list[np.ndarray]) -> np.ndarray:
    g = levels[-1]
    for band in reversed(levels[:-1]):
        h, w = g.shape
        g = band + _up_matrix(h) @ g @ _up_matrix(w).T
    return g


def laplacian_loss_grad(pred, gt):
    """Sum over pyramid levels s=1..5 of 2**(s-1) * mean |level difference|."""
    pred, gt = _check(pred, gt)
    _check_pyramid_dims(pred.shape)
    diff = pred - gt
    # the pyramid is linear, so it can be built on the difference directly
    gs = [diff]
    bands = []
    for _ in range(PYRAMID_LEVELS - 1):
        g = gs[-1]
        h, w = g.shape
        low = _down_matrix(h) @ g @ _down_matrix(w).T
        bands.append(g - _up_matrix(h // 2) @ low @ _up_matrix(w // 2).T)
        gs.append(low)
    levels = bands + [gs[-1]]
    weights = [2.0**s for s in range(PYRAMID_LEVELS)]
    value = float(sum(w * np.abs(lv).mean() for w, lv in zip(weights, levels)))
    g_levels = [w * np.sign(lv) / lv.size for w, lv in zip(weights, levels)]

    g_low = g_levels[-1]
    for s in range(PYRAMID_LEVELS - 2, -1, -1):
        h, w = gs[s].shape
        g_low = g_low - _up_matrix(h // 2).T @ g_levels[s] @ _up_matrix(w // 2)
        g_low = g_levels[s] + _down_matrix(h).T @ g_low @ _down_matrix(w)
    return value, g_low


def separate_l1(pred, gt, trimap) -> float:
    return separate_l1_grad(pred, gt, trimap)[0]


def l2_loss(pred, gt, trimap) -> float:
    return l2_loss_grad(pred, gt, trimap)[0]


def laplacian_loss(pred, gt) -> float:
    return laplacian_loss_grad(pred, gt)[0]


def gradient_loss(pred, gt, trimap) -> float:
    return gradient_loss_grad(pred, gt, trimap)[0]


def matting_loss_grad(pred, gt, trimap, weights: LossWeights = LossWeights()):
    """Weighted sum of the four components and its gradient wrt ``pred``."""
    sp, g_sp = separate_l1_grad(pred, gt, trimap)
    l2, g_l2 = l2_loss_grad(pred, gt, trimap)
    lap, g_lap = laplacian_loss_grad(pred, gt)
    grad, g_grad = gradient_loss_grad(pred, gt, trimap)
    total = weights.sp_l1 * sp + weights.l2 * l2 + weights.lap * lap + weights.grad * grad
    dpred = weights.sp_l1 * g_sp + weights.l2 * g_l2 + weights.lap * g_lap + weights.grad * g_grad
    return LossBreakdown(sp, l2, lap, grad, total), dpred


def matting_loss(pred, gt, trimap, weights: LossWeights = LossWeights()) -> LossBreakdown:
    return matting_loss_grad(pred, gt, trimap, weights)[0]
