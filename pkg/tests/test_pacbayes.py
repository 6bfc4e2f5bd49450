import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldpost.data import DataGenSpec
from coldpost.gaussian import Gaussian, sample
from coldpost.numerics import RandomStream, jackknife_stderr
from coldpost.pacbayes import (
    CgfEstimate,
    alquier_expectation_bound,
    cgf_closed_form,
    default_lambda_grid,
    empirical_cgf,
    empirical_r,
    lambda_intersection_search,
    loss_variance,
    optimal_lambda_variance,
    prior_loss_variance,
    prior_predictive_variance,
    r_semi_analytic,
    tempered_rho,
    tilted_variance_check,
)
from coldpost.tempering import ModelSpec

GRID = default_lambda_grid()


def second_differences(lam, values):
    """Convexity check for a non-uniform grid: divided second differences."""
    d1 = np.diff(values) / np.diff(lam)
    return np.diff(d1)


def constant_truth_model(noise_var=1e-30):
    spec = DataGenSpec(np.array([1.0]), noise_var)
    model = ModelSpec.isotropic(1, 1.0, 2.0)
    return spec, model


class TestEmpiricalCgf:
    def test_grid_properties(self, no_misspec):
        theta = np.random.default_rng(0).normal(size=10)
        est = empirical_cgf(no_misspec.model, no_misspec.data_gen, theta, GRID, 2000, 5, RandomStream(1))
        assert abs(est.values[0]) <= 5 * est.std_errs[0]
        assert np.all(est.values >= -5 * est.std_errs)
        assert np.all(second_differences(est.lambdas, est.values) >= -1e-3)
        assert est.resamples == 2000 and est.n == 5

    def test_matches_closed_form(self, no_misspec):
        theta = np.zeros(10)
        lam = np.array([0.01, 0.05, 0.1, 0.2])
        est = empirical_cgf(no_misspec.model, no_misspec.data_gen, theta, lam, 20_000, 5, RandomStream(2))
        exact = cgf_closed_form(no_misspec.model, no_misspec.data_gen, theta, lam)
        assert np.all(np.abs(est.values - exact) <= 5 * est.std_errs)

    def test_closed_form_against_one_dim_integration(self, no_misspec):
        from scipy import integrate

        theta = np.random.default_rng(3).normal(size=10)
        lam = 0.3
        model, spec = no_misspec.model, no_misspec.data_gen
        from coldpost.losses import expected_log_loss

        L = expected_log_loss(model, spec, theta)

        def inner(x):
            m, p = spec.mean_fn(x), model.features(x) @ theta
            f = lambda y: math.exp(-(y - m) ** 2 / 2 - lam * (0.5 * math.log(2 * math.pi) + (y - p) ** 2 / 2)) / math.sqrt(2 * math.pi)
            return integrate.quad(f, m - 15, m + 15, epsabs=1e-14)[0]

        mgf = integrate.quad(inner, -1, 1, epsabs=1e-13, limit=200)[0] / 2
        assert cgf_closed_form(model, spec, theta, [lam])[0] == pytest.approx(lam * L + math.log(mgf), abs=1e-9)

    def test_degenerate_constant_loss(self):
        spec, model = constant_truth_model()
        est = empirical_cgf(model, spec, np.array([1.0]), GRID, 200, 5, RandomStream(4))
        np.testing.assert_allclose(est.values, 0.0, atol=1e-12)

    def test_constant_model_y_floor(self, truth):
        # theta predicts a constant; only the y-randomness and the x-dependence of the truth remain
        model = ModelSpec.isotropic(10, 1.0, 2.0)
        theta = np.zeros(10)
        theta[0] = 1.0
        est = empirical_cgf(model, truth, theta, GRID[:12], 20_000, 5, RandomStream(5))
        floor = cgf_closed_form(model, truth, theta, GRID[:12])
        assert np.all(np.abs(est.values - floor) <= 5 * est.std_errs + 1e-12)
        assert np.all(floor > 0)

    def test_large_lambda_slope(self):
        # with noise variance 1/(2 pi) the per-point loss has infimum 0
        spec = DataGenSpec(np.ones(10), 1.0)
        model = ModelSpec.isotropic(10, 1 / (2 * math.pi), 2.0)
        theta = np.ones(10)
        lam = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
        est = empirical_cgf(model, spec, theta, lam, 5000, 1, RandomStream(6))
        slopes = np.diff(est.values) / np.diff(lam)
        from coldpost.losses import expected_log_loss

        L = expected_log_loss(model, spec, theta)
        assert np.all(np.diff(slopes) >= -1e-9)
        assert abs(slopes[-1] - L) < 0.02 * L

    def test_curvature_at_origin(self, no_misspec):
        model, spec = no_misspec.model, no_misspec.data_gen
        theta = np.random.default_rng(7).normal(size=10) * 0.5
        M, n, h = 20_000, 5, 1e-3
        lam = np.array([h, 2 * h, 3 * h])
        est = empirical_cgf(model, spec, theta, lam, M, n, RandomStream(8))
        curv = (est.values[2] - 2 * est.values[1] + est.values[0]) / h**2
        # replay the resampled datasets to get an error bar for the curvature
        rng = RandomStream(8)
        xs = rng.uniform(-1, 1, (M, n))
        ys = spec.mean_fn(xs) + rng.normal((M, n))
        pred = model.features(xs) @ theta
        Lhat = (0.5 * np.log(2 * np.pi) + (ys - pred) ** 2 / 2).mean(axis=1)
        se = jackknife_stderr(Lhat[:2000], lambda v: n * v.var()) * math.sqrt(2000 / M)
        # direct Monte Carlo of the per-point loss variance
        xd = RandomStream(9).uniform(-1, 1, 1_000_000)
        yd = spec.mean_fn(xd) + RandomStream(10).normal(1_000_000)
        ell = 0.5 * np.log(2 * np.pi) + (yd - model.features(xd) @ theta) ** 2 / 2
        v_direct = ell.var()
        v_se = math.sqrt(np.mean((ell - ell.mean()) ** 4) - v_direct**2) / 1000
        assert abs(curv - v_direct) <= 5 * math.hypot(se, v_se)
        assert v_direct == pytest.approx(loss_variance(model, spec, theta), rel=5 * v_se / v_direct + 1e-3)

    def test_too_few_resamples(self, no_misspec):
        with pytest.raises(ValueError):
            empirical_cgf(no_misspec.model, no_misspec.data_gen, np.zeros(10), GRID, 99, 5, RandomStream(0))

    def test_nonpositive_lambda(self, no_misspec):
        with pytest.raises(ValueError):
            empirical_cgf(no_misspec.model, no_misspec.data_gen, np.zeros(10), [0.0, 1.0], 100, 5, RandomStream(0))

    def test_overflow_warning(self, no_misspec):
        est = empirical_cgf(no_misspec.model, no_misspec.data_gen, np.full(10, 50.0), [1e-3, 1e300], 100, 5, RandomStream(0))
        assert est.warnings

    def test_csv(self, tmp_path, no_misspec):
        est = empirical_cgf(no_misspec.model, no_misspec.data_gen, np.zeros(10), GRID[:3], 100, 5, RandomStream(0))
        est.to_csv(tmp_path / "j.csv", "J")
        lines = (tmp_path / "j.csv").read_text().splitlines()
        assert lines[0] == "lambda,J,J_stderr"
        assert float(lines[1].split(",")[1]) == est.values[0]


class TestEmpiricalR:
    @pytest.fixture(scope="class")
    @classmethod
    def r_curve(cls, scenarios):
        cfg = scenarios["no-misspec"]
        return empirical_r(cfg.model, cfg.data_gen, 1000, GRID, 200, 5, RandomStream(11))

    def test_origin_and_convexity(self, r_curve):
        assert abs(r_curve.values[0]) <= 5 * r_curve.std_errs[0]
        assert np.all(r_curve.values >= -5 * r_curve.std_errs)
        assert np.all(second_differences(r_curve.lambdas, r_curve.values) >= -1e-3)

    def test_variance_bound(self, r_curve, scenarios):
        cfg = scenarios["no-misspec"]
        v_bar, v_se = prior_loss_variance(cfg.model, cfg.data_gen, 4000, RandomStream(12))
        small = r_curve.lambdas <= 0.5
        rhs = 5 * r_curve.lambdas[small] ** 2 / 2 * v_bar
        rel = r_curve.std_errs[small] / np.abs(r_curve.values[small]) + v_se / v_bar
        assert np.all(r_curve.values[small] <= rhs * (1 + 5 * rel))

    def test_semi_analytic_agrees_at_small_lambda(self, r_curve, scenarios):
        cfg = scenarios["no-misspec"]
        lam = r_curve.lambdas[r_curve.lambdas <= 0.05]
        semi = r_semi_analytic(cfg.model, cfg.data_gen, 4000, lam, 5, RandomStream(13))
        emp = r_curve.values[: lam.size]
        assert np.all(np.abs(semi.values - emp) <= 5 * np.hypot(semi.std_errs, r_curve.std_errs[: lam.size]))

    def test_too_few_prior_draws(self, no_misspec):
        with pytest.raises(ValueError):
            empirical_r(no_misspec.model, no_misspec.data_gen, 50, GRID, 100, 5, RandomStream(0))


class TestAlquierBound:
    def test_tempered_rho_holds(self, no_misspec):
        for i, lam in enumerate((0.1, 1.0)):
            rep = alquier_expectation_bound(
                no_misspec.model, no_misspec.data_gen, lam, tempered_rho(no_misspec.model, lam), 200, 5, RandomStream(14, i),
                prior_samples=500,
            )
            assert rep.holds
            assert rep.rhs == pytest.approx(rep.train_term + rep.kl_term + rep.r_term, abs=1e-12)

    def test_prior_as_rho(self, no_misspec):
        rep = alquier_expectation_bound(
            no_misspec.model, no_misspec.data_gen, 0.5, lambda d: no_misspec.model.prior, 200, 5, RandomStream(15),
            prior_samples=500,
        )
        assert rep.kl_term == 0.0 and rep.r_term >= 0 and rep.holds

    def test_tiny_lambda_kl_dominates(self, no_misspec):
        rep = alquier_expectation_bound(
            no_misspec.model, no_misspec.data_gen, 1e-3, tempered_rho(no_misspec.model, 1.0), 200, 5, RandomStream(16),
            prior_samples=500,
        )
        assert rep.kl_term > rep.train_term + abs(rep.r_term)
        assert rep.lhs <= rep.rhs

    def test_as_dict(self, no_misspec):
        rep = alquier_expectation_bound(
            no_misspec.model, no_misspec.data_gen, 0.5, tempered_rho(no_misspec.model, 0.5), 20, 5, RandomStream(17),
            prior_samples=200,
        )
        assert set(rep.as_dict()) == {"lhs", "train_term", "kl_term", "r_term", "rhs", "lambda", "holds", "mc_slack"}

    def test_rejects_nonpositive_lambda(self, no_misspec):
        with pytest.raises(ValueError):
            alquier_expectation_bound(no_misspec.model, no_misspec.data_gen, 0.0, tempered_rho(no_misspec.model, 1.0), 10, 5, RandomStream(0))


class TestOptimalLambda:
    def test_arithmetic(self):
        assert optimal_lambda_variance(2.0, 100, 0.04) == pytest.approx(1.0, rel=1e-15)

    def test_homogeneity(self):
        a = optimal_lambda_variance(1.3, 7, 0.2)
        assert optimal_lambda_variance(4 * 1.3, 7, 0.2) == pytest.approx(2 * a, rel=1e-14)

    def test_grid_minimization(self):
        rng = np.random.default_rng(18)
        for _ in range(50):
            kl, n, v = rng.uniform(0.01, 10), int(rng.integers(1, 1000)), rng.uniform(0.01, 10)
            lam = optimal_lambda_variance(kl, n, v)
            grid = np.geomspace(lam / 100, lam * 100, 200_001)
            g = kl / (grid * n) + grid * v / 2
            step = grid[1] / grid[0] - 1
            assert abs(grid[np.argmin(g)] / lam - 1) <= step

    @pytest.mark.parametrize("args", [(0.0, 5, 1.0), (1.0, 0, 1.0), (1.0, 5, -1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            optimal_lambda_variance(*args)


class TestIntersectionSearch:
    def test_quadratic_r(self):
        lam = np.geomspace(1e-3, 8, 20)
        a, c, n = 3.0, 0.7, 5
        res = lambda_intersection_search(lam, a * lam**2, c, n)
        assert res.lam == pytest.approx(math.sqrt(c / a), rel=0.01)
        assert res.from_root and not res.at_boundary

    def test_zero_kl(self):
        lam = np.geomspace(1e-3, 8, 20)
        res = lambda_intersection_search(lam, 2.0 * lam**2, 0.0, 5)
        assert res.lam == lam[0] and res.at_boundary

    @given(st.floats(0.01, 5), st.floats(0.0, 10), st.integers(1, 100))
    @settings(max_examples=50, deadline=None)
    def test_not_worse_than_grid(self, a, c, n):
        lam = np.geomspace(1e-3, 8, 25)
        r = a * lam**2 + 0.1 * a * lam**3
        res = lambda_intersection_search(lam, r, c, n)
        assert res.objective <= np.min((c + r) / (lam * n)) + 1e-12

    def test_short_grid(self):
        with pytest.raises(ValueError):
            lambda_intersection_search(np.linspace(0.1, 1, 5), np.zeros(5), 1.0, 5)


class TestTiltedVariance:
    def test_lambda_zero(self, no_misspec):
        tv = tilted_variance_check(no_misspec.model, no_misspec.data_gen, np.zeros(10), 0.0, 20_000, RandomStream(19))
        assert abs(tv.v_tilted - tv.v_plain) <= 3 * math.hypot(tv.v_tilted_se, tv.v_plain_se)

    def test_large_lambda_shrinks(self, no_misspec):
        vals = []
        for lam in (1.0, 5.0, 20.0, 50.0):
            tv = tilted_variance_check(no_misspec.model, no_misspec.data_gen, np.ones(10), lam, 200_000, RandomStream(20))
            vals.append(tv)
        assert vals[-1].v_tilted < vals[-1].v_plain
        assert all(b.v_tilted < a.v_tilted for a, b in zip(vals, vals[1:]))
        assert vals[-1].v_tilted < 0.05 * vals[-1].v_plain

    def test_constant_loss(self):
        spec, model = constant_truth_model()
        tv = tilted_variance_check(model, spec, np.array([1.0]), 2.0, 10_000, RandomStream(21))
        assert tv.v_tilted == pytest.approx(0.0, abs=1e-20) and tv.v_plain == pytest.approx(0.0, abs=1e-20)

    def test_ess_flag(self, no_misspec):
        tv = tilted_variance_check(no_misspec.model, no_misspec.data_gen, np.full(10, 3.0), 1e5, 10_000, RandomStream(22))
        assert tv.unreliable

    def test_preconditions(self, no_misspec):
        with pytest.raises(ValueError):
            tilted_variance_check(no_misspec.model, no_misspec.data_gen, np.zeros(10), 1.0, 100, RandomStream(0))


class TestPriorPredictiveVariance:
    def test_degenerate_zero(self):
        spec, model = constant_truth_model()
        model = model.with_prior(Gaussian.from_moments([1.0], [[1e-30]]))
        ppv = prior_predictive_variance(model, spec, 100, 100, 5, RandomStream(23))
        assert ppv.value == pytest.approx(0.0, abs=1e-12) and ppv.closed_form == pytest.approx(0.0, abs=1e-12)

    def test_dirac_constant_model_floor(self, truth):
        theta = np.zeros(10)
        theta[0] = 1.0
        model = ModelSpec(10, 1.0, Gaussian.from_moments(theta, 1e-30 * np.eye(10)))
        ppv = prior_predictive_variance(model, truth, 100, 2000, 5, RandomStream(24))
        assert abs(ppv.value - ppv.closed_form) <= 5 * ppv.std_err + 0.1 * ppv.closed_form

    def test_linear_in_n(self, no_misspec):
        a = prior_predictive_variance(no_misspec.model, no_misspec.data_gen, 200, 200, 5, RandomStream(25))
        b = prior_predictive_variance(no_misspec.model, no_misspec.data_gen, 200, 200, 10, RandomStream(25))
        assert b.closed_form == pytest.approx(2 * a.closed_form, rel=1e-12)
        assert b.value == pytest.approx(2 * a.value, rel=0.1)

    def test_wider_prior_larger(self, no_misspec):
        z = sample(Gaussian.isotropic(10, 1.0), RandomStream(26), 200)
        m = no_misspec.model
        narrow = prior_predictive_variance(m, no_misspec.data_gen, 200, 100, 5, RandomStream(27), thetas=z * math.sqrt(2))
        wide = prior_predictive_variance(m, no_misspec.data_gen, 200, 100, 5, RandomStream(27), thetas=z * math.sqrt(8))
        assert wide.closed_form > narrow.closed_form

    def test_counts(self, no_misspec):
        with pytest.raises(ValueError):
            prior_predictive_variance(no_misspec.model, no_misspec.data_gen, 99, 100, 5, RandomStream(0))


def test_cgf_estimate_defaults():
    est = CgfEstimate(np.array([0.1]), np.array([0.0]), np.array([0.0]), 100, 5)
    assert est.warnings == [] and est.theta is None
