"""Continuous-time noise schedules.

``gamma(t)`` is the signal weight of the forward process: 1 at t=0 (clean
matte) and 0 at t=1 (pure noise). ``b`` scales the clean signal before noising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from diffmatte.errors import DomainError

KINDS = ("linear", "cosine", "sigmoid")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "linear"
    b: float = 0.2
    sigmoid_start: float = -3.0
    sigmoid_end: float = 3.0
    sigmoid_tau: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.b <= 1.0:
            raise DomainError(f"input scale b must lie in (0, 1], got {self.b}")
        if not self.sigmoid_end > self.sigmoid_start:
            raise DomainError("sigmoid_end must exceed sigmoid_start")
        if not self.sigmoid_tau > 0.0:
            raise DomainError("sigmoid_tau must be positive")


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def _check_unit_time(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return arr


def gamma(spec: ScheduleSpec, t):
    """Signal weight at unit time ``t`` (scalar or array), monotone from 1 down to 0."""
    t = _check_unit_time(t)
    if spec.kind == "linear":
        g = 1.0 - t
    elif spec.kind == "cosine":
        g = np.cos(0.5 * math.pi * t) ** 2
        # cos(pi/2) is 6e-17 in floating point, not 0
        g = np.where(t == 1.0, 0.0, g)
    else:
        s, e, tau = spec.sigmoid_start, spec.sigmoid_end, spec.sigmoid_tau
        hi = _logistic(-s / tau)
        lo = _logistic(-e / tau)
        g = (_logistic(-(t * (e - s) + s) / tau) - lo) / (hi - lo)
        g = np.where(t == 0.0, 1.0, np.where(t == 1.0, 0.0, g))
    g = np.clip(g, 0.0, 1.0)
    return float(g) if g.ndim == 0 else g


def snr(spec: ScheduleSpec, t):
    """Signal-to-noise ratio ``gamma * b**2 / (1 - gamma)``; ``inf`` where gamma is 1."""
    g = np.asarray(gamma(spec, t), dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(g >= 1.0, np.inf, g * spec.b**2 / (1.0 - g))
    return float(out) if out.ndim == 0 else out


def make_time_grid(steps: int) -> np.ndarray:
    """Uniform descending grid ``[1, (T-1)/T, ..., 0]`` with ``T + 1`` points."""
    if int(steps) != steps or steps < 1:
        raise DomainError(f"step count must be a positive integer, got {steps!r}")
    steps = int(steps)
    return np.array([(steps - i) / steps for i in range(steps + 1)], dtype=np.float64)
