"""Shared numeric utilities: quadrature, random streams, log-sum-exp, jackknife."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def mean(self, values: np.ndarray) -> float:
        """Average of ``values`` (sampled at the nodes) under Uniform(-1, 1)."""
        return 0.5 * float(np.dot(self.weights, values))


def gauss_legendre(order: int) -> QuadratureRule:
    """Nodes and weights of the ``order``-point Gauss-Legendre rule.

    Roots of P_order are found by Newton iteration from Chebyshev-like initial
    guesses; the three-term recurrence gives P and its derivative.
    """
    if not 2 <= order <= 4096:
        raise ValueError(f"quadrature order must lie in [2, 4096], got {order}")
    m = (order + 1) // 2
    i = np.arange(1, m + 1)
    x = np.cos(np.pi * (i - 0.25) / (order + 0.5))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for k in range(2, order + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = order * (x * p1 - p0) / (x * x - 1.0)
        step = p1 / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, order + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = order * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)

    nodes = np.empty(order)
    weights = np.empty(order)
    # x is decreasing from near +1; mirror into ascending order
    nodes[:m] = -x
    nodes[order - m:] = x[::-1]
    weights[:m] = w
    weights[order - m:] = w[::-1]
    if order % 2 == 1:
        nodes[m - 1] = 0.0
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandomStream:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    Backed by numpy's Philox generator. The key is a splitmix64 mix of both
    identifiers, so any task can rebuild its stream without coordination and
    results never depend on scheduling order.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        k0 = _splitmix64(self.master_seed)
        k1 = _splitmix64(k0 ^ _splitmix64(self.stream_id ^ 0xD1B54A32D192ED03))
        self.generator = np.random.Generator(
            np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))
        )

    def spawn(self, stream_id: int) -> "RandomStream":
        """A sibling stream under the same master seed."""
        return RandomStream(self.master_seed, stream_id)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def __repr__(self) -> str:
        return f"RandomStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def stream_id_for(*parts: int) -> int:
    """Fold a tuple of small integers into one 64-bit stream id."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK64))
    return h


def log_sum_exp(values, axis=None):
    """Max-shifted ``log(sum(exp(values)))``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    vmax = np.max(v, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_mean_exp(values, axis=None):
    v = np.asarray(values, dtype=float)
    count = v.size if axis is None else v.shape[axis]
    return log_sum_exp(v, axis=axis) - np.log(count)


def jackknife_stderr(values, statistic: Callable[[np.ndarray], float]) -> float:
    """Leave-one-out jackknife standard error of ``statistic(values)``."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 10:
        raise ValueError(f"jackknife needs at least 10 values, got {n}")
    loo = np.array([statistic(np.delete(v, i, axis=0)) for i in range(n)])
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def jackknife_log_mean_exp(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-mean-exp along axis 0 with its jackknife standard error.

    Vectorized over trailing axes; the leave-one-out sums are formed from the
    full sum in one pass instead of ``n`` separate reductions.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 10:
        raise ValueError(f"jackknife needs at least 10 values, got {n}")
    shift = np.max(v, axis=0)
    e = np.exp(v - shift)
    total = e.sum(axis=0)
    est = np.log(total / n) + shift
    loo = np.log(np.maximum(total - e, 1e-300) / (n - 1)) + shift
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return est, se
