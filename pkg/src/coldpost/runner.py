"""Experiment orchestration: lambda sweeps, gradient checks, DA comparison
and PAC-Bayes runs. Every task derives its own random stream from the
master seed, so outputs do not depend on the number of worker threads."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
import numpy as np

from coldpost.data import Dataset, TransformSet, mirror_invariant_spec, sample_dataset
from coldpost.gaussian import kl_divergence, quadratic_form_covariance, sample
from coldpost.gradients import (
    CpeLabel,
    finite_difference,
    grad_bayes_exact,
    grad_bayes_test,
    grad_empirical_gibbs,
    grad_gibbs_test,
    gradient_report,
    tempering_energy,
    verdict_from_gradient,
)
from coldpost.losses import (
    bayes_loss,
    default_quadrature,
    empirical_log_loss_sum,
    expected_loss_form,
    gibbs_losses,
    loss_report,
)
from coldpost.numerics import RandomStream, stream_id_for
from coldpost.pacbayes import (
    alquier_expectation_bound,
    default_lambda_grid,
    empirical_cgf,
    empirical_r,
    lambda_intersection_search,
    optimal_lambda_variance,
    prior_loss_variance,
    prior_predictive_variance,
    tempered_rho,
)
from coldpost.scenarios import ScenarioConfig
from coldpost.tempering import ModelSpec, da_tempered, likelihood_tempered

log = logging.getLogger(__name__)

# stream purposes
_DATA, _NU, _POST, _PAC, _DA = 1, 2, 3, 4, 5

GRAD_CHECK_LAMBDAS = (0.25, 0.5, 1.0, 2.0, 4.0)
GRAD_CHECK_RTOL = 1e-5
BOUND_LAMBDAS = (0.05, 0.1, 0.25, 0.5, 1.0)


class TheoremViolation(RuntimeError):
    pass


def training_set(cfg: ScenarioConfig, master_seed: int, seed: int, spec=None) -> Dataset:
    rng = RandomStream(master_seed, stream_id_for(_DATA, seed))
    return sample_dataset(spec or cfg.data_gen, cfg.n_train, rng)


def min_neg_log_lik(model: ModelSpec, data: Dataset) -> float:
    """-ln p(D|theta) at the (minimum-norm) least-squares fit."""
    theta, *_ = np.linalg.lstsq(model.design(data), data.ys, rcond=None)
    return empirical_log_loss_sum(model, data, theta)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _map(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepRecord:
    lambda_: float
    seed: int
    gibbs_train_norm: float
    gibbs_test: float
    bayes_test: float
    d_gibbs_train: float
    d_gibbs_test: float
    d_bayes_test: float
    d_bayes_stderr: float

    def row(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


SWEEP_HEADER = [
    "lambda",
    "seed",
    "gibbs_train_norm",
    "gibbs_test",
    "bayes_test",
    "d_gibbs_train",
    "d_gibbs_test",
    "d_bayes_test",
    "d_bayes_stderr",
]


def _sweep_task(args):
    cfg, master_seed, seed, lam = args
    quad = default_quadrature(cfg.quadrature_order)
    data = training_set(cfg, master_seed, seed)
    post = likelihood_tempered(cfg.model, data, lam)
    losses = loss_report(post, cfg.data_gen, quad)
    # common random numbers across lambda: the fresh-sample stream depends on the seed only
    nu = RandomStream(master_seed, stream_id_for(_NU, seed))
    grads = gradient_report(post, cfg.data_gen, nu, cfg.mc_counts.m, quad)
    return SweepRecord(
        lam,
        seed,
        losses.gibbs_train_norm,
        losses.gibbs_test,
        losses.bayes_test,
        grads.d_gibbs_train,
        grads.d_gibbs_test,
        grads.d_bayes_test,
        grads.d_bayes_stderr,
    )


def check_sweep_invariants(records: list[SweepRecord]) -> None:
    """Raise TheoremViolation on any exact-identity failure."""
    by_seed: dict[int, list[SweepRecord]] = {}
    for r in records:
        if r.d_gibbs_train > 1e-12:
            raise TheoremViolation(
                f"train-loss gradient must equal -Var(ln p(D|theta)) <= 0; got {r.d_gibbs_train} "
                f"at lambda={r.lambda_}, seed={r.seed}"
            )
        if r.bayes_test > r.gibbs_test + 1e-9:
            raise TheoremViolation(
                f"Jensen: Bayes loss {r.bayes_test} exceeds Gibbs loss {r.gibbs_test} "
                f"at lambda={r.lambda_}, seed={r.seed}"
            )
        by_seed.setdefault(r.seed, []).append(r)
    for seed, rs in by_seed.items():
        rs = sorted(rs, key=lambda r: r.lambda_)
        train = [r.gibbs_train_norm for r in rs]
        if any(b > a for a, b in zip(train, train[1:])):
            raise TheoremViolation(f"train loss increased along lambda for seed {seed}")


def median_verdict(grads, std_errs):
    """Verdict for the across-seed median slope; its MC band uses the median per-seed error."""
    return verdict_from_gradient(float(np.median(grads)), float(np.median(std_errs)))


def run_sweep(
    cfg: ScenarioConfig,
    out_path,
    master_seed: int = 0,
    threads: int = 1,
    summary_path=None,
) -> dict:
    """Evaluate losses and gradients for every (seed, lambda); write CSV and a JSON summary."""
    tasks = [(cfg, master_seed, s, lam) for s in range(cfg.seeds) for lam in cfg.lambda_grid]
    records = _map(_sweep_task, tasks, threads)
    records.sort(key=lambda r: (r.seed, r.lambda_))
    check_sweep_invariants(records)
    _write_csv(out_path, SWEEP_HEADER, [r.row() for r in records])

    medians = []
    for lam in cfg.lambda_grid:
        rs = [r for r in records if r.lambda_ == lam]
        medians.append({"lambda": lam, **{k: float(np.median([getattr(r, k) for r in rs])) for k in SWEEP_HEADER[2:]}})

    at_one = [r for r in records if r.lambda_ == 1.0]
    per_seed = []
    for r in at_one:
        v = verdict_from_gradient(r.d_bayes_test, r.d_bayes_stderr)
        entry = {"seed": r.seed, "grad_at_one": v.grad_at_one, "std_err": v.std_err, "label": v.label.value}
        if v.label is CpeLabel.CPE:
            data = training_set(cfg, master_seed, r.seed)
            train_sum = r.gibbs_train_norm * data.n
            entry["train_loss_sum"] = train_sum
            entry["min_neg_log_lik"] = min_neg_log_lik(cfg.model, data)
            entry["necessary_condition_margin"] = train_sum - entry["min_neg_log_lik"]
        per_seed.append(entry)
    verdict = median_verdict([r.d_bayes_test for r in at_one], [r.d_bayes_stderr for r in at_one])
    summary = {
        "scenario": cfg.name,
        "master_seed": master_seed,
        "records": len(records),
        "medians": medians,
        "verdict": {
            "grad_at_one": verdict.grad_at_one,
            "std_err": verdict.std_err,
            "label": verdict.label.value,
            "threshold": verdict.threshold,
        },
        "per_seed_verdicts": per_seed,
    }
    if summary_path is None:
        summary_path = Path(str(out_path) + ".summary.json")
    _write_json(summary_path, summary)
    return summary


# ---------------------------------------------------------------- gradient check


def _rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b))
    return 0.0 if denom == 0 else abs(a - b) / denom


def grad_check_rows(cfg: ScenarioConfig, master_seed: int = 0, lambdas=GRAD_CHECK_LAMBDAS, seed: int = 0, h: float = 1e-4):
    """Closed-form vs finite-difference vs Monte Carlo gradients of all three losses."""
    quad = default_quadrature(cfg.quadrature_order)
    spec, model = cfg.data_gen, cfg.model
    data = training_set(cfg, master_seed, seed)
    curves = {
        "train_gibbs_sum": lambda l: gibbs_losses(likelihood_tempered(model, data, l), spec, quad).G_hat_sum,
        "test_gibbs": lambda l: gibbs_losses(likelihood_tempered(model, data, l), spec, quad).G,
        "bayes": lambda l: bayes_loss(likelihood_tempered(model, data, l), spec, quad),
    }
    L_form = expected_loss_form(model, spec, quad)
    k = cfg.mc_counts.k
    rows = []
    for i, lam in enumerate(lambdas):
        post = likelihood_tempered(model, data, lam)
        energy = tempering_energy(post)
        thetas = sample(post.gaussian, RandomStream(master_seed, stream_id_for(_POST, seed, i)), k)
        a = energy(thetas)
        ell = L_form(thetas)
        ca, cl = a - a.mean(), ell - ell.mean()
        mc = {
            "train_gibbs_sum": (-np.mean(ca * ca) * k / (k - 1), np.std(ca * ca) / np.sqrt(k)),
            "test_gibbs": (-np.mean(ca * cl) * k / (k - 1), np.std(ca * cl) / np.sqrt(k)),
            "bayes": grad_bayes_test(post, spec, RandomStream(master_seed, stream_id_for(_NU, seed, i)), cfg.mc_counts.m),
        }
        closed = {
            "train_gibbs_sum": grad_empirical_gibbs(post),
            "test_gibbs": grad_gibbs_test(post, spec, quad),
            "bayes": grad_bayes_exact(post, spec, quad),
        }
        for loss, curve in curves.items():
            fd = finite_difference(curve, lam, h)
            mc_val, mc_se = mc[loss]
            rel = _rel_err(closed[loss], fd)
            z = abs(mc_val - closed[loss]) / mc_se if mc_se > 0 else 0.0
            rows.append(
                {
                    "scenario": cfg.name,
                    "lambda": lam,
                    "loss": loss,
                    "closed_form": closed[loss],
                    "finite_difference": fd,
                    "monte_carlo": mc_val,
                    "mc_stderr": mc_se,
                    "rel_err_fd": rel,
                    "mc_z": z,
                    "pass": rel <= GRAD_CHECK_RTOL and z <= 3.0 and (loss != "train_gibbs_sum" or closed[loss] <= 0),
                }
            )
    return rows


GRAD_CHECK_HEADER = [
    "scenario",
    "lambda",
    "loss",
    "closed_form",
    "finite_difference",
    "monte_carlo",
    "mc_stderr",
    "rel_err_fd",
    "mc_z",
    "pass",
]


def run_grad_check(cfgs, out_path, master_seed: int = 0, threads: int = 1) -> dict:
    if isinstance(cfgs, ScenarioConfig):
        cfgs = [cfgs]
    chunks = _map(lambda c: grad_check_rows(c, master_seed), cfgs, threads)
    rows = [r for chunk in chunks for r in chunk]
    _write_csv(out_path, GRAD_CHECK_HEADER, rows)
    report = {
        "rows": len(rows),
        "max_rel_err_fd": max(r["rel_err_fd"] for r in rows),
        "max_mc_z": max(r["mc_z"] for r in rows),
        "all_pass": all(r["pass"] for r in rows),
    }
    _write_json(Path(str(out_path) + ".summary.json"), report)
    return report


# ---------------------------------------------------------------- data augmentation


DA_HEADER = [
    "seed",
    "cov_plain",
    "cov_da",
    "d_gibbs_test_plain",
    "d_gibbs_test_da",
    "d_bayes_test_plain",
    "d_bayes_test_da",
    "strengthened",
]


def da_compare_rows(base_cfg: ScenarioConfig, transforms: TransformSet, spec_kind: str, master_seed: int = 0):
    if spec_kind == "mirror":
        spec = mirror_invariant_spec(base_cfg.data_gen.basis_order_true, base_cfg.data_gen.noise_var_true)
    elif spec_kind == "original":
        spec = base_cfg.data_gen
    else:
        raise ValueError("spec_kind must be 'mirror' or 'original'")
    quad = default_quadrature(base_cfg.quadrature_order)
    model = base_cfg.model
    L_form = expected_loss_form(model, spec, quad)
    rows = []
    for seed in range(base_cfg.seeds):
        data = training_set(base_cfg, master_seed, seed, spec)
        plain = likelihood_tempered(model, data, 1.0)
        aug = da_tempered(model, data, transforms, 1.0)
        cov_plain = quadratic_form_covariance(plain.gaussian, tempering_energy(plain), L_form)
        cov_da = quadratic_form_covariance(aug.gaussian, tempering_energy(aug), L_form)
        rows.append(
            {
                "seed": seed,
                "cov_plain": cov_plain,
                "cov_da": cov_da,
                "d_gibbs_test_plain": -cov_plain,
                "d_gibbs_test_da": -cov_da,
                "d_bayes_test_plain": grad_bayes_exact(plain, spec, quad),
                "d_bayes_test_da": grad_bayes_exact(aug, spec, quad),
                "strengthened": bool(cov_da > cov_plain > 0),
            }
        )
    return rows


def summarize_da(rows) -> dict:
    med = {k: float(np.median([r[k] for r in rows])) for k in DA_HEADER[1:-1]}
    return {
        "medians": med,
        "fraction_strengthened": float(np.mean([r["strengthened"] for r in rows])),
        "da_gibbs_gradient_more_negative": med["d_gibbs_test_da"] <= med["d_gibbs_test_plain"],
        "strengthening_in_median": med["cov_da"] > med["cov_plain"] > 0,
    }


def run_da_compare(base_cfg: ScenarioConfig, transforms: TransformSet, out_path, spec_kind: str, master_seed: int = 0) -> dict:
    rows = da_compare_rows(base_cfg, transforms, spec_kind, master_seed)
    _write_csv(out_path, DA_HEADER, rows)
    report = {
        "scenario": base_cfg.name,
        "spec": spec_kind,
        "transforms": list(transforms.names),
        **summarize_da(rows),
    }
    _write_json(Path(str(out_path) + ".summary.json"), report)
    return report


# ---------------------------------------------------------------- PAC-Bayes


def run_pacbayes(
    cfg: ScenarioConfig,
    out_dir,
    master_seed: int = 0,
    prior_samples: int = 1000,
    lambdas=None,
    bound_lambdas=BOUND_LAMBDAS,
) -> dict:
    """CGF grids, R grid, bound reports and the two optimal-lambda estimates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    quad = default_quadrature(cfg.quadrature_order)
    model, spec, n, M = cfg.model, cfg.data_gen, cfg.n_train, cfg.mc_counts.M
    lam_grid = default_lambda_grid() if lambdas is None else np.asarray(lambdas, float)

    def rng(*parts):
        return RandomStream(master_seed, stream_id_for(_PAC, *parts))

    data0 = training_set(cfg, master_seed, 0)
    thetas = {
        "prior_mean": model.prior.mean,
        "prior_draw": sample(model.prior, rng(1), 1)[0],
        "mle": np.linalg.lstsq(model.design(data0), data0.ys, rcond=None)[0],
    }
    cgf = {}
    for i, (name, theta) in enumerate(thetas.items()):
        est = empirical_cgf(model, spec, theta, lam_grid, max(M, 100), n, rng(2, i), quad)
        est.to_csv(out_dir / f"J_{name}.csv", "J")
        cgf[name] = {"J_at_smallest": float(est.values[0]), "J_stderr_at_smallest": float(est.std_errs[0]), "warnings": est.warnings}

    r_curve = empirical_r(model, spec, prior_samples, lam_grid, M, n, rng(3), quad)
    r_curve.to_csv(out_dir / "R.csv", "R")

    bounds = []
    for j, lam in enumerate(bound_lambdas):
        r_at = empirical_r(model, spec, prior_samples, [lam], M, n, rng(4, j), quad)
        rep = alquier_expectation_bound(model, spec, lam, tempered_rho(model, lam), M, n, rng(5, j), quad=quad, r_estimate=r_at)
        bounds.append(rep.as_dict())
    _write_json(out_dir / "bounds.json", bounds)

    # rho = the untempered posterior; its expected KL drives both optimal-lambda formulas
    kl_draws = []
    for j in range(M):
        data = sample_dataset(spec, n, rng(6, j))
        kl_draws.append(kl_divergence(likelihood_tempered(model, data, 1.0).gaussian, model.prior))
    kl_expected = float(np.mean(kl_draws))
    avg_var, avg_var_se = prior_loss_variance(model, spec, prior_samples, rng(7), quad)
    lam_var = optimal_lambda_variance(kl_expected, n, avg_var)
    search = lambda_intersection_search(r_curve.lambdas, r_curve.values, kl_expected, n)
    ppv = prior_predictive_variance(model, spec, max(prior_samples // 10, 100), max(M, 100), n, rng(8), quad)

    report = {
        "scenario": cfg.name,
        "cgf": cgf,
        "bounds_hold": all(b["holds"] for b in bounds),
        "bounds": bounds,
        "expected_kl": kl_expected,
        "prior_avg_loss_variance": avg_var,
        "prior_avg_loss_variance_stderr": avg_var_se,
        "optimal_lambda_variance": lam_var,
        "optimal_lambda_search": search.lam,
        "optimal_lambda_search_at_boundary": search.at_boundary,
        "optimal_lambda_ratio": max(lam_var, search.lam) / min(lam_var, search.lam),
        "prior_predictive_variance": ppv.value,
        "prior_predictive_variance_stderr": ppv.std_err,
        "prior_predictive_variance_closed_form": ppv.closed_form,
        "r_warnings": r_curve.warnings,
    }
    _write_json(out_dir / "summary.json", report)
    return report
