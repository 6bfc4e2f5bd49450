"""Command-line entry point: thin argument parsing over coldpost.runner."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from coldpost import runner
from coldpost.data import TransformSet
from coldpost.scenarios import ConfigError, ScenarioConfig, builtin_scenarios, resolve_scenario


def _grid(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}") from exc


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("master seed must fit in 64 unsigned bits")
    return v


def _common(p: argparse.ArgumentParser, scenario_default: str, out_default: str) -> None:
    p.add_argument("--scenario", default=scenario_default, help="built-in name, JSON config path, or 'all'")
    p.add_argument("--seeds", type=int, help="number of training sets")
    p.add_argument("--master-seed", type=_u64, default=0)
    p.add_argument("--lambda-grid", type=_grid, help="comma-separated ascending lambdas (must contain 1)")
    p.add_argument("--out", default=out_default)
    p.add_argument("--mc-nu", type=int, help="fresh (x, y) draws per Bayes gradient")
    p.add_argument("--mc-post", type=int, help="posterior draws for Monte Carlo checks")
    p.add_argument("--resamples", type=int, help="dataset resamples for PAC-Bayes quantities")
    p.add_argument("--quad-order", type=int)
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coldpost", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="losses and gradients over the lambda grid")
    _common(p, "no-misspec", "sweep.csv")
    p = sub.add_parser("grad-check", help="closed form vs finite differences vs Monte Carlo")
    _common(p, "all", "grad_check.csv")
    p = sub.add_parser("da-compare", help="Gibbs/Bayes gradients with and without augmentation")
    _common(p, "misspec-prior", "da_compare.csv")
    p.add_argument("--transforms", help="comma-separated transform names (default: config's, else identity,mirror)")
    p.add_argument("--spec", choices=("mirror", "original"), default="mirror", help="data law")
    p = sub.add_parser("pacbayes", help="CGF, R function, bounds and optimal lambda")
    _common(p, "no-misspec", "pacbayes")
    p.add_argument("--prior-samples", type=int, default=1000)
    sub.add_parser("scenarios", help="list the built-in scenarios as JSON")
    return parser


def _configs(args) -> list[ScenarioConfig]:
    cfgs = builtin_scenarios() if args.scenario == "all" else [resolve_scenario(args.scenario)]
    out = []
    for cfg in cfgs:
        changes = {}
        if args.seeds is not None:
            changes["seeds"] = args.seeds
        if args.lambda_grid is not None:
            changes["lambda_grid"] = args.lambda_grid
        if args.quad_order is not None:
            changes["quadrature_order"] = args.quad_order
        mc = cfg.mc_counts
        if args.mc_nu is not None:
            mc = replace(mc, m=args.mc_nu)
        if args.mc_post is not None:
            mc = replace(mc, k=args.mc_post)
        if args.resamples is not None:
            mc = replace(mc, M=args.resamples)
        changes["mc_counts"] = mc
        out.append(cfg.with_overrides(**changes))
    return out


def _per_scenario_path(base: str, cfg: ScenarioConfig, many: bool, suffix: str = "") -> Path:
    if not many:
        return Path(base)
    return Path(base) / f"{cfg.name}{suffix}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "scenarios":
        json.dump([c.to_dict() for c in builtin_scenarios()], sys.stdout, indent=2)
        print()
        return 0
    try:
        cfgs = _configs(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    many = len(cfgs) > 1
    reports = []
    try:
        if args.command == "sweep":
            for cfg in cfgs:
                path = _per_scenario_path(args.out, cfg, many, ".csv")
                s = runner.run_sweep(cfg, path, args.master_seed, args.threads)
                reports.append({"scenario": cfg.name, "out": str(path), "verdict": s["verdict"]})
        elif args.command == "grad-check":
            reports.append(runner.run_grad_check(cfgs, args.out, args.master_seed, args.threads))
        elif args.command == "da-compare":
            for cfg in cfgs:
                if args.transforms:
                    transforms = TransformSet.from_names([t.strip() for t in args.transforms.split(",")])
                else:
                    transforms = cfg.transforms or TransformSet.with_mirror()
                path = _per_scenario_path(args.out, cfg, many, ".csv")
                reports.append(runner.run_da_compare(cfg, transforms, path, args.spec, args.master_seed))
        elif args.command == "pacbayes":
            for cfg in cfgs:
                path = _per_scenario_path(args.out, cfg, many)
                r = runner.run_pacbayes(cfg, path, args.master_seed, prior_samples=args.prior_samples)
                reports.append({k: v for k, v in r.items() if k != "bounds"})
    except runner.TheoremViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    json.dump(reports, sys.stdout, indent=2, default=runner._json_default)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
