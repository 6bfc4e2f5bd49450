"""Empirical PAC-Bayes diagnostics for the regression log-loss.

The generalization gap of a model is Delta(theta, D) = L(theta) - L_hat(theta, D).
Its normalized cumulant-generating function over datasets,

    J_theta(lam) = (1/n) ln E_D exp(lam n Delta),

and the prior-averaged version R(lam) = ln E_pi E_D exp(lam n Delta) are
estimated by resampling datasets; every exponential moment goes through a
max-shifted log-sum-exp. For Gaussian models J also has a one-dimensional
quadrature form, used here as an independent check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import interpolate, optimize

from coldpost.data import DataGenSpec, Dataset, fourier_features, sample_dataset
from coldpost.gaussian import Gaussian, kl_divergence, quadratic_form_moments, sample
from coldpost.losses import default_quadrature, expected_loss_form, neg_log_lik_form
from coldpost.numerics import QuadratureRule, RandomStream, jackknife_log_mean_exp
from coldpost.tempering import ModelSpec

log = logging.getLogger(__name__)


def default_lambda_grid(points: int = 20, lo: float = 1e-3, hi: float = 8.0) -> np.ndarray:
    return np.geomspace(lo, hi, points)


@dataclass
class CgfEstimate:
    lambdas: np.ndarray
    values: np.ndarray
    std_errs: np.ndarray
    resamples: int
    n: int
    theta: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    def to_csv(self, path, name: str = "J") -> None:
        with open(path, "w") as fh:
            fh.write(f"lambda,{name},{name}_stderr\n")
            for lam, v, s in zip(self.lambdas, self.values, self.std_errs):
                fh.write(f"{float(lam)!r},{float(v)!r},{float(s)!r}\n")


def _check_lambdas(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 0 or np.any(lam <= 0):
        raise ValueError("lambda grid must be nonempty and strictly positive")
    return lam


def _per_point_losses(model: ModelSpec, xs: np.ndarray, ys: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Log-loss of each theta (rows) on each point; xs, ys share trailing shape."""
    s2 = model.noise_var_model
    phi = fourier_features(xs, model.basis_order_model)
    pred = np.einsum("...k,pk->p...", phi, np.atleast_2d(thetas))
    return 0.5 * np.log(2 * np.pi * s2) + (ys - pred) ** 2 / (2 * s2)


def _log_moments(lambdas: np.ndarray, scaled_gap: np.ndarray, warnings: list):
    """log-mean-exp of lam * scaled_gap over axis 0, per lambda, with jackknife errors."""
    expo = lambdas[None, ...] * scaled_gap[..., None]
    if not np.all(np.isfinite(expo)):
        bad = ~np.all(np.isfinite(expo), axis=tuple(range(expo.ndim - 1)))
        warnings.append(f"non-finite exponents at lambda >= {lambdas[bad].min():.4g}; grid truncated")
        expo = np.where(np.isfinite(expo), expo, np.nan)
    with np.errstate(over="ignore", invalid="ignore"):
        est, se = jackknife_log_mean_exp(expo)
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(se))):
        warnings.append("log-moment or its error bar overflowed; grid truncated")
    return est, se


def empirical_cgf(
    model: ModelSpec,
    spec: DataGenSpec,
    theta,
    lambdas,
    M: int,
    n: int,
    rng: RandomStream,
    quad: Optional[QuadratureRule] = None,
) -> CgfEstimate:
    """Resampled estimate of J_theta on a lambda grid.

    The same M datasets are reused at every lambda, so the estimated curve is
    itself a (sample) cumulant-generating function: convex and anchored at 0.
    """
    if M < 100:
        raise ValueError("need at least 100 dataset resamples")
    lam = _check_lambdas(lambdas)
    theta = np.asarray(theta, dtype=float)
    L = float(expected_loss_form(model, spec, quad)(theta))
    xs = rng.uniform(-1.0, 1.0, (M, n))
    ys = spec.mean_fn(xs) + rng.normal((M, n)) * np.sqrt(spec.noise_var_true)
    Lhat = _per_point_losses(model, xs, ys, theta[None, :])[0].mean(axis=1)
    warnings: list = []
    est, se = _log_moments(lam, n * (L - Lhat), warnings)
    for w in warnings:
        log.warning(w)
    return CgfEstimate(lam, est / n, se / n, M, n, theta, warnings)


def _log_tilt_factor(model: ModelSpec, spec: DataGenSpec, theta, lam: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    """ln E_nu exp(-lam * loss(theta)) per lambda, y analytic and x by quadrature."""
    s2, v = model.noise_var_model, spec.noise_var_true
    quad = quad or default_quadrature()
    dm = spec.mean_fn(quad.nodes) - model.features(quad.nodes) @ np.asarray(theta, float)
    lam_ = lam[:, None]
    log_terms = (
        -0.5 * lam_ * np.log(2 * np.pi * s2)
        - 0.5 * np.log1p(lam_ * v / s2)
        - lam_ * dm**2 / (2 * (s2 + lam_ * v))
    )
    w = 0.5 * quad.weights
    shift = log_terms.max(axis=1, keepdims=True)
    return np.log(np.exp(log_terms - shift) @ w) + shift[:, 0]


def cgf_closed_form(
    model: ModelSpec,
    spec: DataGenSpec,
    theta,
    lambdas,
    quad: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """J_theta(lam) = lam L(theta) + ln E_nu exp(-lam loss), exact up to quadrature.

    The dataset size cancels because the n points are independent.
    """
    lam = _check_lambdas(lambdas)
    quad = quad or default_quadrature()
    theta = np.asarray(theta, dtype=float)
    L = expected_loss_form(model, spec, quad)(theta)
    return lam * L + _log_tilt_factor(model, spec, theta, lam, quad)


def loss_variance(model: ModelSpec, spec: DataGenSpec, theta, quad: Optional[QuadratureRule] = None) -> float:
    """V_nu of the per-point log-loss of ``theta``."""
    quad = quad or default_quadrature()
    s2, v = model.noise_var_model, spec.noise_var_true
    dm = spec.mean_fn(quad.nodes) - model.features(quad.nodes) @ np.asarray(theta, float)
    # per x: (y - pred)^2 has mean v + dm^2 and variance 2 v^2 + 4 v dm^2
    cond_mean = (v + dm**2) / (2 * s2)
    cond_var = (2 * v**2 + 4 * v * dm**2) / (4 * s2**2)
    mean = quad.mean(cond_mean)
    return quad.mean(cond_var) + quad.mean((cond_mean - mean) ** 2)


def empirical_r(
    model: ModelSpec,
    spec: DataGenSpec,
    prior_samples: int,
    lambdas,
    M: int,
    n: int,
    rng: RandomStream,
    quad: Optional[QuadratureRule] = None,
    chunk: int = 200,
) -> CgfEstimate:
    """Double Monte Carlo estimate of R(lam) = ln E_pi E_D exp(lam n Delta).

    Each prior draw gets its own M datasets; standard errors come from a
    jackknife over prior draws.
    """
    if prior_samples < 100:
        raise ValueError("need at least 100 prior draws")
    lam = _check_lambdas(lambdas)
    thetas = sample(model.prior, rng.spawn(rng.stream_id ^ 0x11), prior_samples)
    L_form = expected_loss_form(model, spec, quad)
    L = L_form(thetas)
    per_theta = np.empty((prior_samples, lam.size))
    warnings: list = []
    for lo in range(0, prior_samples, chunk):
        hi = min(lo + chunk, prior_samples)
        xs = rng.uniform(-1.0, 1.0, (hi - lo, M, n))
        ys = spec.mean_fn(xs) + rng.normal((hi - lo, M, n)) * np.sqrt(spec.noise_var_true)
        phi = fourier_features(xs, model.basis_order_model)
        pred = np.einsum("pmnk,pk->pmn", phi, thetas[lo:hi])
        s2 = model.noise_var_model
        Lhat = (0.5 * np.log(2 * np.pi * s2) + (ys - pred) ** 2 / (2 * s2)).mean(axis=2)
        gap = n * (L[lo:hi, None] - Lhat)  # (p, M)
        expo = lam[None, None, :] * gap[..., None]
        shift = expo.max(axis=1, keepdims=True)
        per_theta[lo:hi] = np.log(np.exp(expo - shift).mean(axis=1)) + shift[:, 0, :]
    if not np.all(np.isfinite(per_theta)):
        warnings.append("non-finite exponents; affected lambdas are unreliable")
    est, se = jackknife_log_mean_exp(per_theta)
    for w in warnings:
        log.warning(w)
    return CgfEstimate(lam, est, se, M, n, None, warnings)


def r_semi_analytic(
    model: ModelSpec,
    spec: DataGenSpec,
    prior_samples: int,
    lambdas,
    n: int,
    rng: RandomStream,
    quad: Optional[QuadratureRule] = None,
) -> CgfEstimate:
    """R(lam) with the dataset expectation done exactly: ln E_pi exp(n J_theta(lam))."""
    lam = _check_lambdas(lambdas)
    thetas = sample(model.prior, rng, prior_samples)
    nJ = np.array([n * cgf_closed_form(model, spec, t, lam, quad) for t in thetas])
    est, se = jackknife_log_mean_exp(nJ)
    return CgfEstimate(lam, est, se, 0, n)


def prior_loss_variance(
    model: ModelSpec,
    spec: DataGenSpec,
    prior_samples: int,
    rng: RandomStream,
    quad: Optional[QuadratureRule] = None,
) -> tuple[float, float]:
    """E_pi[V_nu(loss)] by Monte Carlo over prior draws; returns (mean, std err)."""
    thetas = sample(model.prior, rng, prior_samples)
    v = np.array([loss_variance(model, spec, t, quad) for t in thetas])
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    train_term: float
    kl_term: float
    r_term: float
    rhs: float
    lam: float
    holds: bool
    mc_slack: float

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "train_term": self.train_term,
            "kl_term": self.kl_term,
            "r_term": self.r_term,
            "rhs": self.rhs,
            "lambda": self.lam,
            "holds": self.holds,
            "mc_slack": self.mc_slack,
        }


def tempered_rho(model: ModelSpec, lam: float) -> Callable[[Dataset], Gaussian]:
    """Dataset -> tempered posterior at exponent lam (the bound-optimal rho)."""
    from coldpost.tempering import likelihood_tempered

    return lambda data: likelihood_tempered(model, data, lam).gaussian


def alquier_expectation_bound(
    model: ModelSpec,
    spec: DataGenSpec,
    lam: float,
    rho_builder: Callable[[Dataset], Gaussian],
    M: int,
    n: int,
    rng: RandomStream,
    prior_samples: int = 1000,
    r_resamples: int = 200,
    quad: Optional[QuadratureRule] = None,
    r_estimate: Optional[CgfEstimate] = None,
) -> BoundReport:
    """In-expectation PAC-Bayes bound evaluated by dataset resampling.

    lhs = E_D E_rho[L]; rhs = E_D E_rho[L_hat] + E_D KL(rho, pi)/(lam n) + R(lam)/(lam n).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    L_form = expected_loss_form(model, spec, quad)
    test, train, kl = np.empty(M), np.empty(M), np.empty(M)
    for j in range(M):
        data = sample_dataset(spec, n, rng)
        rho = rho_builder(data)
        test[j] = quadratic_form_moments(rho, L_form)[0]
        train[j] = quadratic_form_moments(rho, neg_log_lik_form(model, data))[0] / n
        kl[j] = kl_divergence(rho, model.prior)
    if r_estimate is None:
        r_estimate = empirical_r(model, spec, prior_samples, [lam], r_resamples, n, rng.spawn(rng.stream_id ^ 0x77), quad)
    idx = int(np.argmin(np.abs(r_estimate.lambdas - lam)))
    R, R_se = float(r_estimate.values[idx]), float(r_estimate.std_errs[idx])
    scale = 1.0 / (lam * n)
    lhs, train_term, kl_term, r_term = test.mean(), train.mean(), scale * kl.mean(), scale * R
    rhs = train_term + kl_term + r_term
    gap = test - train - scale * kl
    slack = 3.0 * float(np.sqrt(gap.var(ddof=1) / M + (scale * R_se) ** 2))
    return BoundReport(
        lhs=float(lhs),
        train_term=float(train_term),
        kl_term=float(kl_term),
        r_term=float(r_term),
        rhs=float(rhs),
        lam=float(lam),
        holds=bool(lhs <= rhs + slack),
        mc_slack=slack,
    )


def optimal_lambda_variance(kl_expected: float, n: int, avg_loss_variance: float) -> float:
    """Minimizer of KL/(lam n) + lam V / 2 over lam > 0."""
    if kl_expected <= 0 or n <= 0 or avg_loss_variance <= 0:
        raise ValueError("all inputs must be positive")
    return float(np.sqrt(2.0 * kl_expected / (n * avg_loss_variance)))


@dataclass(frozen=True)
class LambdaSearch:
    lam: float
    objective: float
    at_boundary: bool
    from_root: bool


def lambda_intersection_search(lambdas, r_values, kl_expected: float, n: int) -> LambdaSearch:
    """Minimize (KL + R(lam)) / (lam n) given R on a grid.

    Stationary points satisfy R(lam) = lam R'(lam) - KL; the residual is
    located by bracketing on a cubic spline through the grid. The grid
    minimizer is the fallback whenever the root is absent or worse.
    """
    lam = np.asarray(lambdas, dtype=float)
    R = np.asarray(r_values, dtype=float)
    if lam.size < 20:
        raise ValueError("need at least 20 grid points")
    if np.any(np.diff(lam) <= 0):
        raise ValueError("lambda grid must be strictly increasing")
    objective = (kl_expected + R) / (lam * n)
    i_best = int(np.argmin(objective))
    best = LambdaSearch(float(lam[i_best]), float(objective[i_best]), i_best in (0, lam.size - 1), False)

    spline = interpolate.CubicSpline(lam, R)
    dspline = spline.derivative()

    def residual(t):
        return spline(t) - t * dspline(t) + kl_expected

    res = residual(lam)
    flips = np.nonzero(np.sign(res[:-1]) > np.sign(res[1:]))[0]
    for i in flips:
        root = optimize.brentq(residual, lam[i], lam[i + 1], xtol=1e-12)
        val = float((kl_expected + spline(root)) / (root * n))
        if val <= best.objective:
            best = LambdaSearch(float(root), val, False, True)
    return best


@dataclass(frozen=True)
class TiltedVariance:
    v_tilted: float
    v_tilted_se: float
    v_plain: float
    v_plain_se: float
    ess: float
    unreliable: bool
    fourth_cumulant: float


def _weighted_var(ell, w):
    w = w / w.sum()
    mu = w @ ell
    return w @ (ell - mu) ** 2


def _block_jackknife(stat, ell, w, blocks: int = 50):
    n = ell.shape[0]
    idx = np.array_split(np.arange(n), blocks)
    full = stat(ell, w)
    loo = []
    for b in idx:
        keep = np.ones(n, dtype=bool)
        keep[b] = False
        loo.append(stat(ell[keep], w[keep]))
    loo = np.array(loo)
    return full, float(np.sqrt((blocks - 1) / blocks * np.sum((loo - loo.mean()) ** 2)))


def tilted_variance_check(
    model: ModelSpec,
    spec: DataGenSpec,
    theta,
    lam: float,
    mc: int,
    rng: RandomStream,
) -> TiltedVariance:
    """Loss variance under q_lam (nu reweighted by exp(-lam loss)) vs under nu.

    Self-normalized importance sampling from nu; the comparison is reported,
    not enforced, since it only follows under a fourth-cumulant condition.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if mc < 10_000:
        raise ValueError("need at least 1e4 draws")
    theta = np.asarray(theta, dtype=float)
    xs = rng.uniform(-1.0, 1.0, mc)
    ys = spec.mean_fn(xs) + rng.normal(mc) * np.sqrt(spec.noise_var_true)
    ell = _per_point_losses(model, xs, ys, theta[None, :])[0]
    logw = -lam * ell
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / (w @ w))
    vt, vt_se = _block_jackknife(_weighted_var, ell, w)
    vp, vp_se = _block_jackknife(_weighted_var, ell, np.ones_like(ell))
    wn = w / w.sum()
    mu = wn @ ell
    m2 = wn @ (ell - mu) ** 2
    m4 = wn @ (ell - mu) ** 4
    return TiltedVariance(vt, vt_se, vp, vp_se, ess, ess < 50, float(m4 - 3 * m2**2))


@dataclass(frozen=True)
class PriorPredictiveVariance:
    value: float
    std_err: float
    closed_form: float


def prior_predictive_variance(
    model: ModelSpec,
    spec: DataGenSpec,
    prior_samples: int,
    M: int,
    n: int,
    rng: RandomStream,
    quad: Optional[QuadratureRule] = None,
    thetas: Optional[np.ndarray] = None,
) -> PriorPredictiveVariance:
    """E_pi[V_D(ln p(D|theta))]: resampled, plus the exact per-theta n V_nu(loss)."""
    if prior_samples < 100 or M < 100:
        raise ValueError("need at least 100 prior draws and 100 resamples")
    if thetas is None:
        thetas = sample(model.prior, rng.spawn(rng.stream_id ^ 0x23), prior_samples)
    per_theta = np.empty(len(thetas))
    for p, theta in enumerate(thetas):
        xs = rng.uniform(-1.0, 1.0, (M, n))
        ys = spec.mean_fn(xs) + rng.normal((M, n)) * np.sqrt(spec.noise_var_true)
        loglik = -_per_point_losses(model, xs, ys, theta[None, :])[0].sum(axis=1)
        per_theta[p] = loglik.var(ddof=1)
    closed = n * np.mean([loss_variance(model, spec, t, quad) for t in thetas])
    return PriorPredictiveVariance(
        float(per_theta.mean()),
        float(per_theta.std(ddof=1) / np.sqrt(len(per_theta))),
        float(closed),
    )
