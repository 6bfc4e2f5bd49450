import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coldpost.data import (
    DataGenSpec,
    Dataset,
    TransformSet,
    fourier_features,
    mirror_invariant_spec,
    sample_dataset,
    true_conditional,
)
from coldpost.numerics import RandomStream

R2PI, RPI = 1 / math.sqrt(2 * math.pi), 1 / math.sqrt(math.pi)


class TestFourierFeatures:
    def test_at_zero_k10(self):
        expected = [R2PI, RPI, 0, RPI, 0, RPI, 0, RPI, 0, RPI]
        np.testing.assert_allclose(fourier_features(0.0, 10), expected, atol=1e-16)

    def test_k1(self):
        np.testing.assert_allclose(fourier_features(0.0, 1), [R2PI])

    @given(st.floats(-1, 1), st.integers(1, 30))
    def test_against_direct_evaluation(self, x, K):
        phi = fourier_features(x, K)
        direct = [R2PI] + [(math.sin(k * x) if k % 2 else math.cos(k * x)) * RPI for k in range(2, K + 1)]
        np.testing.assert_allclose(phi, direct, atol=1e-15)
        assert abs(phi @ phi - sum(v * v for v in direct)) < 1e-12
        assert np.all(np.abs(phi[1:]) <= RPI + 1e-16)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            fourier_features(1.01, 3)
        with pytest.raises(ValueError):
            fourier_features(0.0, 0)

    def test_batched_shape(self):
        xs = np.linspace(-1, 1, 6).reshape(2, 3)
        assert fourier_features(xs, 4).shape == (2, 3, 4)


class TestSampleDataset:
    def test_empty(self, truth):
        d = sample_dataset(truth, 0, RandomStream(0))
        assert d.n == 0 and d.xs.shape == (0,)

    def test_noiseless(self):
        spec = DataGenSpec(np.ones(10), 1e-30)
        d = sample_dataset(spec, 50, RandomStream(1))
        resid = d.ys - fourier_features(d.xs, 10) @ np.ones(10)
        assert np.max(np.abs(resid)) <= 1e-10

    def test_noise_variance(self, truth):
        d = sample_dataset(truth, 100_000, RandomStream(2))
        assert abs(np.var(d.ys - truth.mean_fn(d.xs)) - 1.0) < 0.05
        assert np.all(np.abs(d.xs) <= 1)
        assert abs(d.xs.mean()) < 0.01 and abs(d.xs.var() - 1 / 3) < 0.01

    def test_reproducible(self, truth):
        a = sample_dataset(truth, 7, RandomStream(3, 9))
        b = sample_dataset(truth, 7, RandomStream(3, 9))
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)

    def test_negative_n(self, truth):
        with pytest.raises(ValueError):
            sample_dataset(truth, -1, RandomStream(0))


class TestTrueConditional:
    def test_at_zero(self, truth):
        mean, var = true_conditional(truth, 0.0)
        assert mean == pytest.approx(R2PI + 5 * RPI, abs=1e-14)
        assert var == 1.0

    def test_zero_coeffs(self):
        assert true_conditional(DataGenSpec(np.zeros(10), 0.7), 0.4) == (0.0, 0.7)

    def test_matches_conditional_samples(self, truth):
        x = 0.3
        mean, var = true_conditional(truth, x)
        ys = mean + RandomStream(4).normal(100_000) * math.sqrt(var)
        assert abs(ys.mean() - mean) < 4 * math.sqrt(var / ys.size)


class TestMirrorSpec:
    def test_coeffs(self):
        np.testing.assert_array_equal(mirror_invariant_spec(10, 1.0).true_coeffs, [1, 1, 0, 1, 0, 1, 0, 1, 0, 1])

    def test_invariance(self):
        spec = mirror_invariant_spec(10, 1.0)
        assert abs(true_conditional(spec, 0.37)[0] - true_conditional(spec, -0.37)[0]) < 1e-14
        xs = np.random.default_rng(0).uniform(-1, 1, 200)
        np.testing.assert_allclose(spec.mean_fn(xs), spec.mean_fn(-xs), atol=1e-14)

    def test_original_not_invariant(self, truth):
        assert abs(true_conditional(truth, 0.37)[0] - true_conditional(truth, -0.37)[0]) > 0.1


class TestSpecAndDataset:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DataGenSpec(np.ones(3), 0.0)
        assert DataGenSpec(np.ones(4), 1.0).basis_order_true == 4

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset([0.1, 0.2], [1.0])
        with pytest.raises(ValueError):
            Dataset([1.5], [1.0])

    def test_csv_round_trip(self, tmp_path, truth):
        d = sample_dataset(truth, 9, RandomStream(5))
        path = tmp_path / "d.csv"
        d.to_csv(path)
        assert path.read_text().splitlines()[0] == "x,y"
        back = Dataset.from_csv(path)
        assert np.array_equal(back.xs, d.xs) and np.array_equal(back.ys, d.ys)


class TestTransformSet:
    def test_defaults_uniform(self):
        ts = TransformSet.with_mirror()
        np.testing.assert_allclose(ts.weights, [0.5, 0.5])
        assert ts.names == ("identity", "mirror")

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            TransformSet.from_names(["identity", "mirror"], [0.6, 0.6])

    def test_out_of_interval_map(self):
        with pytest.raises(ValueError):
            TransformSet((lambda x: 2 * x,))

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            TransformSet.from_names(["shuffle"])

    def test_empty(self):
        with pytest.raises(ValueError):
            TransformSet(())
