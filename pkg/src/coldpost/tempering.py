"""Closed-form tempered posteriors for conjugate Gaussian linear regression."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from coldpost.data import Dataset, TransformSet, fourier_features
from coldpost.gaussian import Gaussian, linear_gaussian_posterior


@dataclass(frozen=True)
class ModelSpec:
    """Assumed likelihood N(theta . phi_K(x), noise_var_model) and Gaussian prior."""

    basis_order_model: int
    noise_var_model: float
    prior: Gaussian

    def __post_init__(self):
        if not self.noise_var_model > 0:
            raise ValueError("noise_var_model must be positive")
        if self.prior.dim != self.basis_order_model:
            raise ValueError("prior dimension must equal the model basis order")

    @classmethod
    def isotropic(cls, K: int, noise_var: float, prior_var: float) -> "ModelSpec":
        return cls(K, noise_var, Gaussian.isotropic(K, prior_var))

    def features(self, xs) -> np.ndarray:
        return fourier_features(xs, self.basis_order_model)

    def design(self, data: Dataset) -> np.ndarray:
        return self.features(data.xs).reshape(data.n, self.basis_order_model)

    def with_prior(self, prior: Gaussian) -> "ModelSpec":
        return ModelSpec(self.basis_order_model, self.noise_var_model, prior)


class TemperingKind(str, Enum):
    LIKELIHOOD = "likelihood"
    PRIOR = "prior"
    FULL = "full"
    DATA_AUGMENTED = "data_augmented"


@dataclass(frozen=True)
class TemperedPosterior:
    kind: TemperingKind
    temperature: float
    gaussian: Gaussian
    model: ModelSpec
    dataset: Dataset
    transforms: Optional[TransformSet] = None

    def with_gaussian(self, g: Gaussian) -> "TemperedPosterior":
        return TemperedPosterior(self.kind, self.temperature, g, self.model, self.dataset, self.transforms)


def likelihood_tempered(model: ModelSpec, data: Dataset, lam: float) -> TemperedPosterior:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    g = linear_gaussian_posterior(model.prior, model.design(data), data.ys, model.noise_var_model, lam)
    return TemperedPosterior(TemperingKind.LIKELIHOOD, lam, g, model, data)


def _scaled_prior(prior: Gaussian, factor: float) -> Gaussian:
    # pi(theta)^factor for a Gaussian keeps the mean and divides the covariance
    return Gaussian.from_moments(prior.mean, prior.cov / factor)


def prior_tempered(model: ModelSpec, data: Dataset, gamma: float) -> TemperedPosterior:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    prior = _scaled_prior(model.prior, gamma)
    g = linear_gaussian_posterior(prior, model.design(data), data.ys, model.noise_var_model, 1.0)
    return TemperedPosterior(TemperingKind.PRIOR, gamma, g, model, data)


def full_tempered(model: ModelSpec, data: Dataset, tau: float) -> TemperedPosterior:
    if not tau > 0:
        raise ValueError("tau must be positive")
    prior = _scaled_prior(model.prior, tau)
    g = linear_gaussian_posterior(prior, model.design(data), data.ys, model.noise_var_model, tau)
    return TemperedPosterior(TemperingKind.FULL, tau, g, model, data)


def augmented_design(model: ModelSpec, data: Dataset, transforms: TransformSet):
    """Rows sqrt(w_t) phi(t(x_i)) and targets sqrt(w_t) y_i over all (i, t).

    Their Gram matrix and cross term equal the transform-averaged ones, so the
    ordinary conjugate update on these rows is the augmented update.
    """
    rows, targets = [], []
    for t, w in zip(transforms.transforms, transforms.weights):
        if w == 0:
            continue
        s = np.sqrt(w)
        rows.append(s * model.features(t(data.xs)).reshape(data.n, model.basis_order_model))
        targets.append(s * data.ys)
    return np.vstack(rows), np.concatenate(targets)


def da_tempered(model: ModelSpec, data: Dataset, transforms: TransformSet, lam: float) -> TemperedPosterior:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    design, targets = augmented_design(model, data, transforms)
    g = linear_gaussian_posterior(model.prior, design, targets, model.noise_var_model, lam)
    return TemperedPosterior(TemperingKind.DATA_AUGMENTED, lam, g, model, data, transforms)


def rank_one_update(g: Gaussian, phis: np.ndarray, ys: np.ndarray, noise_var: float):
    """Batched conjugate update of ``g`` with single observations (phi_j, y_j).

    Returns (means, gains, pred_var) with means shape (m, d); the updated
    covariance of observation j is  cov - outer(gains_j, gains_j) * pred_var_j
    where gains_j = cov phi_j / pred_var_j.
    """
    phis = np.atleast_2d(phis)
    ys = np.atleast_1d(ys)
    u = phis @ g.cov  # cov is symmetric
    pred_var = noise_var + np.sum(u * phis, axis=1)
    gains = u / pred_var[:, None]
    resid = ys - phis @ g.mean
    means = g.mean + gains * resid[:, None]
    return means, gains, pred_var


def updated_posterior(post: TemperedPosterior, y: float, x: float, noise_var: Optional[float] = None) -> Gaussian:
    """Condition ``post`` on one extra observation with an untempered likelihood."""
    s2 = post.model.noise_var_model if noise_var is None else noise_var
    phi = post.model.features(x).reshape(1, -1)
    means, gains, pv = rank_one_update(post.gaussian, phi, np.array([y]), s2)
    cov = post.gaussian.cov - pv[0] * np.outer(gains[0], gains[0])
    return Gaussian.from_moments(means[0], cov)
