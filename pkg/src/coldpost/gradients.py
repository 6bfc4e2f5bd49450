"""Temperature gradients of the train, test-Gibbs and Bayes losses.

All identities use the sum convention for the training loss,
G_hat_sum = E_rho[-ln p(D|theta)], under which the derivative of any
posterior expectation is a covariance with the tempered log-likelihood:

    d/dlam E_{p^lam}[f] = Cov_{p^lam}(ln p(D|theta), f).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from coldpost.data import DataGenSpec, Dataset, sample_dataset
from coldpost.gaussian import (
    Gaussian,
    QuadraticForm,
    quadratic_form_covariance,
    quadratic_form_moments,
    sample,
)
from coldpost.losses import default_quadrature, expected_loss_form, neg_log_lik_form
from coldpost.numerics import QuadratureRule, RandomStream
from coldpost.tempering import (
    ModelSpec,
    TemperedPosterior,
    TemperingKind,
    likelihood_tempered,
)

_LOG_TINY = np.log(1e-300)


class NumericUnderflow(FloatingPointError):
    pass


def tempering_energy(post: TemperedPosterior) -> QuadraticForm:
    """The quadratic that lambda multiplies: n L_hat (or n L_hat_DA)."""
    if post.kind is TemperingKind.LIKELIHOOD:
        return neg_log_lik_form(post.model, post.dataset)
    if post.kind is TemperingKind.DATA_AUGMENTED:
        return neg_log_lik_form(post.model, post.dataset, post.transforms)
    raise ValueError(f"{post.kind.value} tempering has no likelihood temperature; use grad_meta")


def grad_empirical_gibbs(post: TemperedPosterior) -> float:
    """d/dlam of E[n L_hat] = -Var(ln p(D|theta)), always <= 0.

    For a DA posterior the tempered quantity is n L_hat_DA and the same
    identity holds with the augmented loss.
    """
    _, var = quadratic_form_moments(post.gaussian, tempering_energy(post))
    return -var


def grad_gibbs_test(post: TemperedPosterior, spec: DataGenSpec, quad: Optional[QuadratureRule] = None) -> float:
    """d/dlam G = -Cov(n L_hat, L), exact."""
    energy = tempering_energy(post)
    return -quadratic_form_covariance(post.gaussian, energy, expected_loss_form(post.model, spec, quad))


def _updated_train_loss_shift(g: Gaussian, energy: QuadraticForm, phis, residual_moments, noise_var):
    """Change of E[energy] after a rank-one update, given E[r] and E[r^2] of the residual.

    With gain k and predictive variance v, the update moves the mean by k r
    and removes v k k' from the covariance, so the change is
        k'Ak (E[r^2] - v) + E[r] k'(2 A mu + b).
    """
    u = phis @ g.cov
    v = noise_var + np.sum(u * phis, axis=1)
    k = u / v[:, None]
    kAk = np.sum((k @ energy.A) * k, axis=1)
    slope = k @ (2.0 * energy.A @ g.mean + energy.b)
    r1, r2 = residual_moments
    return kAk * (r2 - v) + r1 * slope


def grad_bayes_test(post: TemperedPosterior, spec: DataGenSpec, rng: RandomStream, m: int) -> tuple[float, float]:
    """Monte Carlo d/dlam B as  G_hat_sum(p_bar) - G_hat_sum(p).

    Draws ``m`` fresh (y, x) from the truth, conditions the posterior on each
    one with an untempered likelihood, and averages the exact change of the
    training loss. Returns (estimate, standard error).
    """
    if m < 2:
        raise ValueError("need at least 2 samples")
    fresh = sample_dataset(spec, m, rng)
    g = post.gaussian
    phis = post.model.design(fresh)
    r = fresh.ys - phis @ g.mean
    d = _updated_train_loss_shift(g, tempering_energy(post), phis, (r, r * r), post.model.noise_var_model)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(m))


def grad_bayes_exact(post: TemperedPosterior, spec: DataGenSpec, quad: Optional[QuadratureRule] = None) -> float:
    """Same identity with the y-expectation done analytically and x by quadrature."""
    quad = quad or default_quadrature()
    g = post.gaussian
    phis = post.model.features(quad.nodes)
    e = spec.mean_fn(quad.nodes) - phis @ g.mean
    d = _updated_train_loss_shift(
        g, tempering_energy(post), phis, (e, spec.noise_var_true + e * e), post.model.noise_var_model
    )
    return quad.mean(d)


@dataclass(frozen=True)
class SScoreEstimate:
    value: float
    std_err: float
    neg_s_mean: float
    neg_s_std_err: float


def grad_bayes_via_s(
    post: TemperedPosterior,
    spec: DataGenSpec,
    rng: RandomStream,
    m: int,
    k: int,
    denominator: str = "mc",
    chunk: int = 256,
) -> SScoreEstimate:
    """d/dlam B at the posterior as -Cov(n L_hat, S), with S the relative
    predictive score of each posterior draw.

    ``denominator="mc"`` normalizes each fresh point by the average density
    over the same k draws; ``"exact"`` uses the closed-form Gaussian
    predictive. Only the exact variant makes the mean of -S a nontrivial
    check (with "mc" it equals 1 by construction).
    """
    if m < 2 or k < 2:
        raise ValueError("need at least 2 fresh points and 2 posterior draws")
    if denominator not in ("mc", "exact"):
        raise ValueError("denominator must be 'mc' or 'exact'")
    g = post.gaussian
    s2 = post.model.noise_var_model
    thetas = sample(g, rng.spawn(rng.stream_id ^ 0x5), k)
    fresh = sample_dataset(spec, m, rng)
    phis = post.model.design(fresh)
    a = tempering_energy(post)(thetas)
    c = a - a.mean()

    pred_mean = phis @ g.mean
    pred_var = s2 + np.sum((phis @ g.cov) * phis, axis=1)
    log_pred_exact = -0.5 * (np.log(2 * np.pi * pred_var) + (fresh.ys - pred_mean) ** 2 / pred_var)

    w_colsum = np.zeros(k)  # sum_i w_ij
    wc_colsum = np.zeros(k)  # sum_i w_ij * g_i
    g_rows = np.empty(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        logp = -0.5 * (np.log(2 * np.pi * s2) + (fresh.ys[lo:hi, None] - phis[lo:hi] @ thetas.T) ** 2 / s2)
        row_max = logp.max(axis=1)
        if np.any(row_max < _LOG_TINY):
            raise NumericUnderflow("all posterior draws give a negligible density to a fresh point")
        if denominator == "mc":
            e = np.exp(logp - row_max[:, None])
            w = e / e.mean(axis=1, keepdims=True)
        else:
            w = np.exp(logp - log_pred_exact[lo:hi, None])
        gi = w @ c / k
        g_rows[lo:hi] = gi
        w_colsum += w.sum(axis=0)
        wc_colsum += gi @ w

    value = float(g_rows.mean())
    neg_s = w_colsum / m
    # influence of each posterior draw on the ratio estimator (delta method)
    if denominator == "mc":
        infl = (c * w_colsum - wc_colsum) / m - c
    else:
        infl = c * (neg_s - neg_s.mean())
    var = g_rows.var(ddof=1) / m + infl.var(ddof=1) / k
    return SScoreEstimate(
        value=value,
        std_err=float(np.sqrt(var)),
        neg_s_mean=float(neg_s.mean()),
        neg_s_std_err=float(neg_s.std(ddof=1) / np.sqrt(k)),
    )


class MetaTarget(str, Enum):
    TRAIN_GIBBS = "train_gibbs"
    TEST_GIBBS = "test_gibbs"


def log_prior_form(prior: Gaussian) -> QuadraticForm:
    P = prior.precision()
    return QuadraticForm(
        -0.5 * P,
        P @ prior.mean,
        -0.5 * prior.mean @ P @ prior.mean - 0.5 * (prior.dim * np.log(2 * np.pi) + prior.log_det()),
    )


def grad_meta(
    post: TemperedPosterior,
    f_kind: MetaTarget,
    spec: Optional[DataGenSpec] = None,
    quad: Optional[QuadratureRule] = None,
) -> float:
    """Temperature gradient of E_rho[f] for prior and full tempering.

    The tempered log-density is c(theta) times the temperature, with c the
    base log-prior (prior tempering) or log-likelihood plus log-prior (full
    tempering), so the gradient is Cov(c, f).
    """
    model = post.model
    log_prior = log_prior_form(model.prior)
    if post.kind is TemperingKind.PRIOR:
        c = log_prior
    elif post.kind is TemperingKind.FULL:
        c = neg_log_lik_form(model, post.dataset).scaled(-1.0) + log_prior
    else:
        raise ValueError("grad_meta handles prior and full tempering only")
    f_kind = MetaTarget(f_kind)
    if f_kind is MetaTarget.TRAIN_GIBBS:
        f = neg_log_lik_form(model, post.dataset)
    else:
        if spec is None:
            raise ValueError("test-loss gradient needs the data-generating spec")
        f = expected_loss_form(model, spec, quad)
    return quadratic_form_covariance(post.gaussian, c, f)


def second_grad_gibbs_test(
    post: TemperedPosterior,
    spec: DataGenSpec,
    rng: RandomStream,
    k: int,
    quad: Optional[QuadratureRule] = None,
) -> tuple[float, float]:
    """Monte Carlo d^2/dlam^2 G, the joint third central moment of (nL_hat, nL_hat, L)."""
    if k < 100:
        raise ValueError("need at least 100 posterior draws")
    thetas = sample(post.gaussian, rng, k)
    a = tempering_energy(post)(thetas)
    ell = expected_loss_form(post.model, spec, quad)(thetas)
    prod = (a - a.mean()) ** 2 * (ell - ell.mean())
    value = prod.sum() * k / ((k - 1) * (k - 2))
    return float(value), float(prod.std(ddof=1) / np.sqrt(k))


def finite_difference(loss_curve: Callable[[float], float], lam: float, h: float = 1e-4, lower: float = 0.0) -> float:
    """Central difference (f(lam + h) - f(lam - h)) / 2h.

    ``lower`` is the edge of the curve's domain (0 for temperatures); pass
    ``-inf`` for functions defined on the whole line.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if lam - h < lower:
        raise ValueError(f"central difference would step below {lower}")
    return (loss_curve(lam + h) - loss_curve(lam - h)) / (2.0 * h)


class CpeLabel(str, Enum):
    CPE = "CPE"
    WPE = "WPE"
    NEUTRAL = "Neutral"


@dataclass(frozen=True)
class CpeVerdict:
    grad_at_one: float
    std_err: float
    label: CpeLabel
    threshold: float


NEUTRAL_FLOOR = 1e-4


def verdict_from_gradient(grad: float, std_err: float) -> CpeVerdict:
    threshold = max(3.0 * std_err, NEUTRAL_FLOOR)
    if grad < -threshold:
        label = CpeLabel.CPE
    elif grad > threshold:
        label = CpeLabel.WPE
    else:
        label = CpeLabel.NEUTRAL
    return CpeVerdict(float(grad), float(std_err), label, threshold)


def classify_cpe(
    model: ModelSpec,
    spec: DataGenSpec,
    data: Dataset,
    rng: RandomStream,
    m: int = 5000,
    posterior: Optional[TemperedPosterior] = None,
) -> CpeVerdict:
    """Label the Bayes-loss slope at lambda = 1 as CPE, WPE or Neutral."""
    post = posterior if posterior is not None else likelihood_tempered(model, data, 1.0)
    value, se = grad_bayes_test(post, spec, rng, m)
    return verdict_from_gradient(value, se)


@dataclass(frozen=True)
class GradientReport:
    d_gibbs_train: float
    d_gibbs_test: float
    d_bayes_test: float
    d_bayes_stderr: float
    mc_samples: int
    method: str = "closed_form+monte_carlo"


def gradient_report(
    post: TemperedPosterior,
    spec: DataGenSpec,
    rng: RandomStream,
    m: int,
    quad: Optional[QuadratureRule] = None,
) -> GradientReport:
    bayes, se = grad_bayes_test(post, spec, rng, m)
    return GradientReport(
        d_gibbs_train=grad_empirical_gibbs(post),
        d_gibbs_test=grad_gibbs_test(post, spec, quad),
        d_bayes_test=bayes,
        d_bayes_stderr=se,
        mc_samples=m,
    )
