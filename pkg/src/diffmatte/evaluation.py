"""Model evaluation over sample sets: metrics, per-step curves, drift diagnostics."""

from __future__ import annotations

import numpy as np

from diffmatte.diffusion import consistent_sample, sample
from diffmatte.metrics import MetricReport, evaluate, sad


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def predict_all(model, samples, steps: int, mode: str = "stochastic", seed: int = 0) -> list[np.ndarray]:
    return [sample(model, s.image, s.trimap, steps, mode, sample_rng(seed, i)).alpha for i, s in enumerate(samples)]


def evaluate_model(model, samples, steps: int, mode: str = "stochastic", seed: int = 0) -> list[MetricReport]:
    preds = predict_all(model, samples, steps, mode, seed)
    return [evaluate(p, s.alpha, s.trimap) for p, s in zip(preds, samples)]


def mean_report(reports: list[MetricReport]) -> MetricReport:
    return MetricReport(*(float(np.mean([getattr(r, k) for r in reports])) for k in ("sad", "mse", "grad", "conn")))


def mean_sad(model, samples, steps: int, mode: str = "stochastic", seed: int = 0) -> float:
    preds = predict_all(model, samples, steps, mode, seed)
    return float(np.mean([sad(p, s.alpha, s.trimap) for p, s in zip(preds, samples)]))


def step_curves(model, samples, steps: int, seed: int = 0, mode: str = "stochastic") -> tuple[np.ndarray, np.ndarray]:
    """Mean per-step SAD for self re-noising and for ground-truth (consistent) re-noising.

    Both runs of a sample share the same seed, so their first steps coincide.
    """
    self_curve = np.zeros(steps)
    gt_curve = np.zeros(steps)
    for i, s in enumerate(samples):
        own = sample(model, s.image, s.trimap, steps, mode, sample_rng(seed, i))
        cons = consistent_sample(model, s.image, s.trimap, s.alpha, steps, sample_rng(seed, i), mode)
        self_curve += [sad(a, s.alpha, s.trimap) for a in own.predictions]
        gt_curve += [sad(a, s.alpha, s.trimap) for a in cons.predictions]
    return self_curve / len(samples), gt_curve / len(samples)


def step_degradation(model, samples, seed: int = 0, short: int = 1, long: int = 10) -> float:
    """Mean SAD at ``long`` steps minus mean SAD at ``short`` steps (positive means iteration hurts)."""
    return mean_sad(model, samples, long, seed=seed) - mean_sad(model, samples, short, seed=seed)
