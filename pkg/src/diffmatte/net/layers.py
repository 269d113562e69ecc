"""Differentiable layers with hand-written backward passes.

Arrays are numpy NCHW. Each layer caches what its backward pass needs during
``forward`` and accumulates parameter gradients into ``grads`` on ``backward``.
Parameters are stored as float32; ``Module.astype(np.float64)`` switches a
module tree to 64-bit for gradient checking.
"""

from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from diffmatte.errors import DomainError


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self.record = True

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self.children.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.params.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.grads.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_grads(f"{prefix}{cname}.")

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def zero_grad(self) -> None:
        for m in self.modules():
            for g in m.grads.values():
                g[...] = 0.0

    def astype(self, dtype) -> "Module":
        for m in self.modules():
            for name in m.params:
                m.params[name] = m.params[name].astype(dtype)
                m.grads[name] = np.zeros_like(m.params[name])
        return self

    @property
    def dtype(self):
        for _, p in self.named_parameters():
            return p.dtype
        return np.dtype(np.float32)

    @contextlib.contextmanager
    def no_grad(self):
        """Run forward passes without caching activations; backward is unavailable inside."""
        saved = [(m, m.record) for m in self.modules()]
        for m, _ in saved:
            m.record = False
        try:
            yield self
        finally:
            for m, flag in saved:
                m.record = flag

    def _stash(self, **cache) -> None:
        self._cache = cache if self.record else None

    def _cached(self) -> dict:
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a recorded forward pass")
        self._cache = None
        return cache


def _pad_windows(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    pad = k // 2
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win, win.shape[2], win.shape[3]


def conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Same-padded cross-correlation of NCHW ``x`` with (O, C, k, k) kernels ``w``."""
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DomainError(f"kernel must have shape (O, C, k, k), got {w.shape}")
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DomainError(f"input channels {x.shape} do not match kernel {w.shape}")
    if bias.shape != (w.shape[0],):
        raise DomainError(f"bias shape {bias.shape} does not match {w.shape[0]} output channels")
    conv = Conv2d(w.shape[1], w.shape[0], k=w.shape[2], stride=stride, zero=True)
    conv.record = False
    conv.params["w"], conv.params["b"] = w, bias
    return conv.forward(x)


class Conv2d(Module):
    """Zero-padded "same" cross-correlation with k in {1, 3} and stride in {1, 2}."""

    def __init__(
        self, c_in: int, c_out: int, k: int = 3, stride: int = 1, rng=None, zero: bool = False, gain: float = 1.0
    ):
        super().__init__()
        if k not in (1, 3) or stride not in (1, 2):
            raise DomainError(f"unsupported conv geometry k={k}, stride={stride}")
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        if zero:
            w = np.zeros((c_out, c_in, k, k), dtype=np.float32)
        else:
            rng = np.random.default_rng() if rng is None else rng
            # He-style fan-in scaling
            std = gain * np.sqrt(2.0 / (c_in * k * k))
            w = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(np.float32)
        self.add_param("w", w)
        self.add_param("b", np.zeros(c_out, dtype=np.float32))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DomainError(f"conv expects (N, {self.c_in}, H, W) input, got {x.shape}")
        n = x.shape[0]
        win, ho, wo = _pad_windows(x, self.k, self.stride)
        # (N, Ho, Wo, C, k, k) rows for a single GEMM
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        wmat = self.params["w"].reshape(self.c_out, -1)
        y = cols @ wmat.T + self.params["b"]
        self._stash(cols=cols, shape=x.shape, ho=ho, wo=wo)
        return y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cache = self._cached()
        n, c, h, w = cache["shape"]
        ho, wo, k, s = cache["ho"], cache["wo"], self.k, self.stride
        dmat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.c_out)
        self.grads["w"] += (dmat.T @ cache["cols"]).reshape(self.params["w"].shape)
        self.grads["b"] += dmat.sum(axis=0)
        # scatter in (C, N, H, W) layout so every window slice is contiguous
        dcols = (self.params["w"].reshape(self.c_out, -1).T @ dmat.T).reshape(c, k, k, n, ho, wo)
        pad = k // 2
        dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, i, j]
        return dxp[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3)


def silu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SiLU activation and its elementwise derivative."""
    sig = expit(x)
    return x * sig, sig * (1.0 + x * (1.0 - sig))


class SiLU(Module):
    def forward(self, x):
        y, dydx = silu(x)
        self._stash(dydx=dydx)
        return y

    def backward(self, dy):
        return dy * self._cached()["dydx"]


class Sigmoid(Module):
    def forward(self, x):
        y = expit(x)
        self._stash(y=y)
        return y

    def backward(self, dy):
        y = self._cached()["y"]
        return dy * y * (1.0 - y)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour ×2 upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def time_features(t: np.ndarray, kind: str) -> np.ndarray:
    """Featurize per-sample times ``t`` of shape (N,) for the embedding's linear map."""
    t = np.asarray(t).reshape(-1, 1)
    if kind == "linear":
        return t
    if kind == "sinusoidal":
        freqs = np.pi * 2.0 ** np.arange(4)
        return np.concatenate([t, np.sin(t * freqs), np.cos(t * freqs)], axis=1)
    raise DomainError(f"unknown time featurization {kind!r}")


class TimeEmbedding(Module):
    """Learnable affine map from time features to a per-channel bias vector."""

    def __init__(self, width: int, features: str = "linear", rng=None):
        super().__init__()
        self.features = features
        n_in = time_features(np.zeros(1), features).shape[1]
        rng = np.random.default_rng() if rng is None else rng
        self.add_param("w", (rng.standard_normal((width, n_in)) * 0.5).astype(np.float32))
        self.add_param("b", np.zeros(width, dtype=np.float32))

    def forward(self, t: np.ndarray) -> np.ndarray:
        phi = time_features(t, self.features).astype(self.params["w"].dtype)
        self._stash(phi=phi)
        return phi @ self.params["w"].T + self.params["b"]

    def backward(self, de: np.ndarray) -> None:
        phi = self._cached()["phi"]
        self.grads["w"] += de.T @ phi
        self.grads["b"] += de.sum(axis=0)
