"""Scenario catalog and JSON configuration files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from coldpost.data import DataGenSpec, TransformSet
from coldpost.gaussian import Gaussian
from coldpost.losses import DEFAULT_QUAD_ORDER
from coldpost.tempering import ModelSpec

DEFAULT_LAMBDA_GRID = (0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class McCounts:
    m: int = 5000  # fresh (y, x) draws for Bayes gradients
    k: int = 100_000  # posterior draws for Monte Carlo cross-checks
    M: int = 200  # dataset resamples for PAC-Bayes quantities


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    data_gen: DataGenSpec
    model: ModelSpec
    n_train: int = 5
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    seeds: int = 20
    mc_counts: McCounts = field(default_factory=McCounts)
    quadrature_order: int = DEFAULT_QUAD_ORDER
    transforms: Optional[TransformSet] = None

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        object.__setattr__(self, "lambda_grid", grid)
        self.validate()

    def validate(self) -> None:
        grid = self.lambda_grid
        if not grid:
            raise ConfigError("lambda_grid is empty")
        if any(v < 0 for v in grid) or list(grid) != sorted(grid):
            raise ConfigError("lambda_grid must be ascending and nonnegative")
        if 1.0 not in grid:
            raise ConfigError("lambda_grid must contain 1")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.n_train < 0:
            raise ConfigError("n_train must be nonnegative")

    def with_overrides(self, **changes) -> "ScenarioConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "data_gen": {
                "basis_order_true": self.data_gen.basis_order_true,
                "true_coeffs": self.data_gen.true_coeffs.tolist(),
                "noise_var_true": self.data_gen.noise_var_true,
                "input_law": self.data_gen.input_law,
            },
            "model": {
                "basis_order_model": self.model.basis_order_model,
                "noise_var_model": self.model.noise_var_model,
                "prior": {
                    "mean": self.model.prior.mean.tolist(),
                    "cov": self.model.prior.cov.tolist(),
                },
            },
            "n_train": self.n_train,
            "lambda_grid": list(self.lambda_grid),
            "seeds": self.seeds,
            "mc_counts": {"m": self.mc_counts.m, "k": self.mc_counts.k, "M": self.mc_counts.M},
            "quadrature_order": self.quadrature_order,
            "transforms": None,
        }
        if self.transforms is not None:
            d["transforms"] = {"names": list(self.transforms.names), "weights": self.transforms.weights.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            dg = d["data_gen"]
            coeffs = np.asarray(dg["true_coeffs"], dtype=float)
            if "basis_order_true" in dg and int(dg["basis_order_true"]) != coeffs.size:
                raise ConfigError("basis_order_true does not match true_coeffs")
            data_gen = DataGenSpec(coeffs, float(dg["noise_var_true"]), dg.get("input_law", "uniform_minus1_to_1"))
            md = d["model"]
            K = int(md["basis_order_model"])
            prior_d = md["prior"]
            if "variance" in prior_d:
                prior = Gaussian.isotropic(K, float(prior_d["variance"]), prior_d.get("mean"))
            else:
                prior = Gaussian.from_moments(prior_d["mean"], prior_d["cov"])
            model = ModelSpec(K, float(md["noise_var_model"]), prior)
            mc = McCounts(**d.get("mc_counts", {}))
            tr = d.get("transforms")
            transforms = TransformSet.from_names(tr["names"], tr.get("weights")) if tr else None
            return cls(
                name=d["name"],
                data_gen=data_gen,
                model=model,
                n_train=int(d.get("n_train", 5)),
                lambda_grid=tuple(d.get("lambda_grid", DEFAULT_LAMBDA_GRID)),
                seeds=int(d.get("seeds", 20)),
                mc_counts=mc,
                quadrature_order=int(d.get("quadrature_order", DEFAULT_QUAD_ORDER)),
                transforms=transforms,
            )
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc.args[0]!r}") from None

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _truth() -> DataGenSpec:
    return DataGenSpec(np.ones(10), 1.0)


def builtin_scenarios() -> list[ScenarioConfig]:
    """The four Bayesian linear regression settings (n = 5, truth K = 10, unit noise)."""
    return [
        ScenarioConfig("no-misspec", _truth(), ModelSpec.isotropic(10, 1.0, 2.0)),
        ScenarioConfig("misspec-likelihood-I", _truth(), ModelSpec.isotropic(20, 0.15, 2.0)),
        ScenarioConfig("misspec-likelihood-II", _truth(), ModelSpec.isotropic(10, 3.0, 2.0)),
        ScenarioConfig("misspec-prior", _truth(), ModelSpec.isotropic(10, 1.0, 0.5)),
    ]


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    for cfg in builtin_scenarios():
        if cfg.name == name_or_path:
            return cfg
    path = Path(name_or_path)
    if path.is_file():
        return ScenarioConfig.from_json(path)
    names = ", ".join(c.name for c in builtin_scenarios())
    raise ConfigError(f"unknown scenario {name_or_path!r} (built-ins: {names}; or a JSON file path)")
