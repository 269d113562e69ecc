"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from diffmatte.net.layers import Module

# below this magnitude gradient entries are compared absolutely
ABS_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _entries(arr: np.ndarray, limit: int | None, rng) -> np.ndarray:
    idx = np.arange(arr.size)
    if limit is not None and arr.size > limit:
        idx = np.sort(rng.choice(arr.size, size=limit, replace=False))
    return idx


# central stencils: offsets (in units of epsilon) and weights, divided by epsilon
STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, epsilon: float, entries, order: int = 2) -> np.ndarray:
    """Central differences of ``loss()`` with respect to ``arr`` (perturbed in place).

    ``order`` 4 uses the five-point stencil, whose truncation error is small
    enough to allow a larger ``epsilon`` and so less cancellation roundoff.
    """
    offsets, weights = STENCILS[order]
    flat = arr.reshape(-1)
    out = np.zeros(len(entries))
    for k, i in enumerate(entries):
        old = flat[i]
        values = []
        for o in offsets:
            flat[i] = old + o * epsilon
            values.append(loss())
        flat[i] = old
        out[k] = np.dot(weights, values) / epsilon
    return out


def grad_check(
    layer: Module,
    inputs: Sequence,
    epsilon: float = 1e-5,
    *,
    wrt: Sequence[int] | None = None,
    forward: Callable | None = None,
    backward: Callable | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    order: int = 2,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    The scalar loss is ``sum(R * layer(*inputs))`` for a fixed random ``R``.
    ``wrt`` lists the input positions matched, in order, by the values that
    ``backward`` returns; None entries in that return are skipped. The layer
    and float inputs must already be 64-bit.
    """
    forward = forward or layer.forward
    backward = backward or layer.backward
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    out = forward(*inputs)
    weights = rng.standard_normal(out.shape)

    def loss() -> float:
        with layer.no_grad():
            return float(np.sum(weights * forward(*inputs)))

    layer.zero_grad()
    forward(*inputs)
    returned = backward(weights)
    if returned is None:
        returned = ()
    elif isinstance(returned, np.ndarray):
        returned = (returned,)
    if wrt is None:
        wrt = [i for i, v in enumerate(inputs) if isinstance(v, np.ndarray) and v.dtype.kind == "f"]

    worst = 0.0
    for name, p in layer.named_parameters():
        grad = dict(layer.named_grads())[name]
        idx = _entries(p, max_entries, rng)
        worst = max(worst, relative_error(grad.reshape(-1)[idx], numeric_grad(loss, p, epsilon, idx, order)))
    for pos, g in zip(wrt, returned):
        if g is None:
            continue
        x = inputs[pos]
        idx = _entries(x, max_entries, rng)
        worst = max(worst, relative_error(g.reshape(-1)[idx], numeric_grad(loss, x, epsilon, idx, order)))
    return worst


def grad_check_scalar(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    epsilon: float = 1e-5,
) -> float:
    """Check ``fn(x) -> (value, dvalue/dx)`` against central differences."""
    x = np.array(x, dtype=np.float64)
    _, grad = fn(x)
    idx = np.arange(x.size)
    numeric = numeric_grad(lambda: fn(x)[0], x, epsilon, idx)
    return relative_error(grad.reshape(-1), numeric)
