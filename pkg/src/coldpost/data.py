"""Synthetic regression data: Fourier features on [-1, 1], the true
conditional law, dataset sampling, and label-preserving transform sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from coldpost.numerics import RandomStream

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def fourier_features(x, K: int) -> np.ndarray:
    """Fourier basis of order ``K``.

    Component 1 is 1/sqrt(2 pi); component k >= 2 is sin(kx)/sqrt(pi) for odd
    k and cos(kx)/sqrt(pi) for even k. Accepts a scalar (returns shape (K,))
    or an array of inputs (returns shape x.shape + (K,)).
    """
    if K < 1:
        raise ValueError(f"basis order must be >= 1, got {K}")
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0) or not np.all(np.isfinite(xa)):
        raise ValueError("inputs must lie in [-1, 1]")
    k = np.arange(1, K + 1, dtype=float)
    kx = xa[..., None] * k
    out = np.where(k % 2 == 1, np.sin(kx), np.cos(kx)) * _INV_SQRT_PI
    out[..., 0] = _INV_SQRT_2PI
    return out


@dataclass(frozen=True)
class DataGenSpec:
    """The data-generating distribution: x ~ U(-1, 1), y | x ~ N(coeffs . phi(x), noise_var)."""

    true_coeffs: np.ndarray
    noise_var_true: float
    input_law: str = "uniform_minus1_to_1"

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.true_coeffs, dtype=float))
        object.__setattr__(self, "true_coeffs", coeffs)
        if not self.noise_var_true > 0:
            raise ValueError("noise_var_true must be positive")
        if self.input_law != "uniform_minus1_to_1":
            raise ValueError(f"unsupported input law {self.input_law!r}")

    @property
    def basis_order_true(self) -> int:
        return self.true_coeffs.shape[0]

    def mean_fn(self, x) -> np.ndarray:
        return fourier_features(x, self.basis_order_true) @ self.true_coeffs


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float).reshape(-1)
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        if xs.shape != ys.shape:
            raise ValueError("xs and ys must have the same length")
        if np.any(np.abs(xs) > 1.0):
            raise ValueError("inputs must lie in [-1, 1]")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.xs, other.xs]), np.concatenate([self.ys, other.ys]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in zip(self.xs, self.ys):
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["x"]) for r in rows], [float(r["y"]) for r in rows])


def sample_dataset(spec: DataGenSpec, n: int, rng: RandomStream) -> Dataset:
    if n < 0:
        raise ValueError("n must be nonnegative")
    xs = rng.uniform(-1.0, 1.0, n)
    noise = rng.normal(n) * np.sqrt(spec.noise_var_true)
    return Dataset(xs, spec.mean_fn(xs) + noise)


def true_conditional(spec: DataGenSpec, x: float) -> tuple[float, float]:
    return float(spec.mean_fn(x)), spec.noise_var_true


def mirror_invariant_spec(K: int, noise_var: float) -> DataGenSpec:
    """Truth with unit weight on the constant and cosine terms only, so
    the conditional law of y is identical at x and -x."""
    if K < 1:
        raise ValueError("K must be >= 1")
    coeffs = np.ones(K)
    coeffs[2::2] = 0.0  # components 3, 5, ... are sines
    return DataGenSpec(coeffs, noise_var)


def identity(x):
    return x


def mirror(x):
    return -x


_NAMED_TRANSFORMS: dict[str, Callable] = {"identity": identity, "mirror": mirror}


@dataclass(frozen=True)
class TransformSet:
    """Finite set of input maps [-1, 1] -> [-1, 1] with a probability vector."""

    transforms: tuple
    weights: np.ndarray = field(default=None)
    names: tuple = field(default=())

    def __post_init__(self):
        ts = tuple(self.transforms)
        if not ts:
            raise ValueError("transform set must be nonempty")
        w = np.full(len(ts), 1.0 / len(ts)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(ts),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector over the transforms")
        probe = np.linspace(-1.0, 1.0, 41)
        for t in ts:
            if np.any(np.abs(t(probe)) > 1.0):
                raise ValueError("transform does not map [-1, 1] into itself")
        object.__setattr__(self, "transforms", ts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_names(cls, names: Sequence[str], weights=None) -> "TransformSet":
        try:
            ts = tuple(_NAMED_TRANSFORMS[n] for n in names)
        except KeyError as exc:
            raise ValueError(f"unknown transform {exc.args[0]!r}") from None
        return cls(ts, weights, tuple(names))

    @classmethod
    def identity_only(cls) -> "TransformSet":
        return cls.from_names(["identity"])

    @classmethod
    def with_mirror(cls) -> "TransformSet":
        return cls.from_names(["identity", "mirror"])
