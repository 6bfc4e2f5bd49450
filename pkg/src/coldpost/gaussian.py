"""Dense multivariate Gaussians, conjugate linear-Gaussian updates, and
closed-form moments of quadratic forms under a Gaussian."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from coldpost.numerics import RandomStream

_JITTER = 1e-10


class NotPositiveDefinite(linalg.LinAlgError):
    pass


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # one jitter attempt, scaled to the matrix so tiny covariances survive
    scale = max(float(np.mean(np.abs(np.diag(cov)))), np.finfo(float).tiny)
    try:
        return np.linalg.cholesky(cov + _JITTER * scale * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @classmethod
    def from_moments(cls, mean, cov) -> "Gaussian":
        mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
        cov = _symmetrize(cov)
        chol = _cholesky(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        chol.setflags(write=False)
        return cls(mean=mean, cov=cov, chol=chol)

    @classmethod
    def isotropic(cls, dim: int, variance: float, mean=None) -> "Gaussian":
        m = np.zeros(dim) if mean is None else mean
        return cls.from_moments(m, variance * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def precision(self) -> np.ndarray:
        return _symmetrize(linalg.cho_solve((self.chol, True), np.eye(self.dim)))

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


@dataclass(frozen=True)
class QuadraticForm:
    """q(theta) = theta^T A theta + b^T theta + c."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", _symmetrize(A))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        """Evaluate at one point (shape (d,)) or a batch (shape (k, d))."""
        t = np.asarray(theta, dtype=float)
        return np.einsum("...i,ij,...j->...", t, self.A, t) + t @ self.b + self.c

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(self.A + other.A, self.b + other.b, self.c + other.c)

    def scaled(self, factor: float) -> "QuadraticForm":
        return QuadraticForm(factor * self.A, factor * self.b, factor * self.c)

    @classmethod
    def constant(cls, dim: int, c: float) -> "QuadraticForm":
        return cls(np.zeros((dim, dim)), np.zeros(dim), c)


def _check_dim(g: Gaussian, n: int):
    if n != g.dim:
        raise ValueError(f"dimension mismatch: expected {g.dim}, got {n}")


def log_density(g: Gaussian, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_dim(g, x.shape[-1])
    z = linalg.solve_triangular(g.chol, (x - g.mean).T, lower=True)
    maha = np.sum(z * z, axis=0)
    out = -0.5 * (g.dim * np.log(2.0 * np.pi) + g.log_det() + maha)
    return float(out) if x.ndim == 1 else out


def sample(g: Gaussian, rng: RandomStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    z = rng.normal((n, g.dim))
    return g.mean + z @ g.chol.T


def kl_divergence(q: Gaussian, p: Gaussian) -> float:
    """KL(q || p) in nats."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    m = linalg.solve_triangular(p.chol, q.chol, lower=True)
    trace = float(np.sum(m * m))
    z = linalg.solve_triangular(p.chol, q.mean - p.mean, lower=True)
    maha = float(z @ z)
    return 0.5 * (trace + maha - q.dim + p.log_det() - q.log_det())


def linear_gaussian_posterior(
    prior: Gaussian,
    design: np.ndarray,
    targets: np.ndarray,
    noise_var: float,
    lam: float,
) -> Gaussian:
    """Posterior of theta under prior x N(targets; design @ theta, noise_var)^lam."""
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    design = np.atleast_2d(np.asarray(design, dtype=float)).reshape(-1, prior.dim)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if lam == 0 or design.shape[0] == 0:
        return prior
    scale = lam / noise_var
    return gaussian_from_information(
        prior,
        scale * design.T @ design,
        scale * design.T @ targets,
    )


def gaussian_from_information(prior: Gaussian, extra_precision, extra_shift) -> Gaussian:
    """Combine ``prior`` with a Gaussian factor exp(-t'Pt/2 + h't)."""
    prior_prec = prior.precision()
    prec = _symmetrize(prior_prec + extra_precision)
    shift = prior_prec @ prior.mean + extra_shift
    try:
        lc = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("posterior precision is not positive definite") from exc
    cov = linalg.cho_solve((lc, True), np.eye(prior.dim))
    mean = linalg.cho_solve((lc, True), shift)
    return Gaussian.from_moments(mean, cov)


def quadratic_form_moments(g: Gaussian, q: QuadraticForm) -> tuple[float, float]:
    """Mean and variance of q(theta) for theta ~ g."""
    _check_dim(g, q.dim)
    mu, S = g.mean, g.cov
    AS = q.A @ S
    mean = float(np.trace(AS) + mu @ q.A @ mu + q.b @ mu + q.c)
    return mean, quadratic_form_covariance(g, q, q)


def quadratic_form_covariance(g: Gaussian, q1: QuadraticForm, q2: QuadraticForm) -> float:
    """Cov(q1(theta), q2(theta)) for theta ~ g.

    Written through the linear gradients l_i = 2 A_i mu + b_i at the mean:
    2 tr(A1 S A2 S) + l1' S l2, which expands to the usual five-term formula.
    """
    _check_dim(g, q1.dim)
    _check_dim(g, q2.dim)
    mu, S = g.mean, g.cov
    l1 = 2.0 * q1.A @ mu + q1.b
    l2 = 2.0 * q2.A @ mu + q2.b
    A1S = q1.A @ S
    A2S = q2.A @ S
    return float(2.0 * np.sum(A1S * A2S.T) + l1 @ S @ l2)
