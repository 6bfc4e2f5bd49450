"""Exact tempered inference for conjugate Gaussian linear regression, with
closed-form loss gradients, cold/warm posterior diagnostics and PAC-Bayes
quantities."""

from coldpost.data import DataGenSpec, Dataset, TransformSet, fourier_features, sample_dataset
from coldpost.gaussian import Gaussian, QuadraticForm, kl_divergence, quadratic_form_moments
from coldpost.gradients import (
    CpeLabel,
    classify_cpe,
    grad_bayes_exact,
    grad_bayes_test,
    grad_bayes_via_s,
    grad_empirical_gibbs,
    grad_gibbs_test,
)
from coldpost.losses import bayes_loss, gibbs_losses, loss_report
from coldpost.numerics import RandomStream, gauss_legendre
from coldpost.scenarios import ScenarioConfig, builtin_scenarios
from coldpost.tempering import ModelSpec, likelihood_tempered

__version__ = "0.1.0"

__all__ = [
    "CpeLabel",
    "DataGenSpec",
    "Dataset",
    "Gaussian",
    "ModelSpec",
    "QuadraticForm",
    "RandomStream",
    "ScenarioConfig",
    "TransformSet",
    "bayes_loss",
    "builtin_scenarios",
    "classify_cpe",
    "fourier_features",
    "gauss_legendre",
    "gibbs_losses",
    "grad_bayes_exact",
    "grad_bayes_test",
    "grad_bayes_via_s",
    "grad_empirical_gibbs",
    "grad_gibbs_test",
    "kl_divergence",
    "likelihood_tempered",
    "loss_report",
    "quadratic_form_moments",
    "sample_dataset",
]
