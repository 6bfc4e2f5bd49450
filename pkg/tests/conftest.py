import numpy as np
import pytest

from coldpost.data import DataGenSpec, Dataset, sample_dataset
from coldpost.gaussian import Gaussian
from coldpost.numerics import RandomStream
from coldpost.scenarios import builtin_scenarios
from coldpost.tempering import ModelSpec


@pytest.fixture(scope="session")
def scenarios():
    return {c.name: c for c in builtin_scenarios()}


@pytest.fixture
def truth():
    return DataGenSpec(np.ones(10), 1.0)


@pytest.fixture
def no_misspec(scenarios):
    return scenarios["no-misspec"]


@pytest.fixture
def five_points(truth):
    return sample_dataset(truth, 5, RandomStream(11, 1))


def random_spd(rng: np.random.Generator, d: int, floor: float = 0.1) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return a @ a.T / d + floor * np.eye(d)


def random_gaussian(rng: np.random.Generator, d: int) -> Gaussian:
    return Gaussian.from_moments(rng.normal(size=d), random_spd(rng, d))


def one_dim_model(prior_var: float = 1.0, noise_var: float = 1.0, prior_mean: float = 0.0) -> ModelSpec:
    """K = 1 model, whose only feature is the constant 1/sqrt(2 pi)."""
    return ModelSpec(1, noise_var, Gaussian.from_moments([prior_mean], [[prior_var]]))


def constant_feature_data(ys) -> Dataset:
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    return Dataset(np.zeros_like(ys), ys)
