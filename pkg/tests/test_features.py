"""Random Fourier feature map: kernel approximation quality and determinism."""

import numpy as np
import pytest

from lccad.core import FeatureMatrix
from lccad.features import FeatureMapper, IdentityMapper, median_bandwidth


def gaussian_kernel(x, y, sigma):
    diff = np.asarray(x) - np.asarray(y)
    return np.exp(-float(diff @ diff) / (2.0 * sigma**2))


class TestFeatureMapper:
    def test_output_shape_and_scale_bound(self):
        mapper = FeatureMapper(3, output_dim=64, sigma=1.0, seed=0)
        z = mapper.map(np.ones(3))
        assert z.shape == (64,)
        # each coordinate is sqrt(2/D) cos(.), bounded by sqrt(2/D)
        assert np.all(np.abs(z) <= np.sqrt(2.0 / 64) + 1e-15)

    def test_map_all_matches_map(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(10, 4))
        mapper = FeatureMapper(4, output_dim=32, sigma=2.0, seed=7)
        batch = mapper.map_all(X)
        single = np.stack([mapper.map(row) for row in X])
        np.testing.assert_allclose(batch, single, atol=1e-14)

    def test_same_seed_same_map(self):
        a = FeatureMapper(2, output_dim=16, sigma=1.0, seed=3)
        b = FeatureMapper(2, output_dim=16, sigma=1.0, seed=3)
        np.testing.assert_array_equal(a.freqs, b.freqs)
        np.testing.assert_array_equal(a.phases, b.phases)

    def test_different_seed_different_map(self):
        a = FeatureMapper(2, output_dim=16, sigma=1.0, seed=3)
        b = FeatureMapper(2, output_dim=16, sigma=1.0, seed=4)
        assert not np.array_equal(a.freqs, b.freqs)

    def test_kernel_approximation_error_small(self):
        """<z(x), z(y)> approximates the Gaussian kernel; the error shrinks
        at the Monte Carlo rate, so D = 4096 should land within ~0.05."""
        rng = np.random.default_rng(5)
        sigma = 1.5
        mapper = FeatureMapper(3, output_dim=4096, sigma=sigma, seed=11)
        worst = 0.0
        for _ in range(50):
            x, y = rng.normal(size=(2, 3))
            approx = float(mapper.map(x) @ mapper.map(y))
            exact = gaussian_kernel(x, y, sigma)
            worst = max(worst, abs(approx - exact))
        assert worst < 0.05

    def test_doubling_dim_reduces_error(self):
        """Mean absolute kernel error taken over many pairs and several seeds
        should drop when D doubles (Monte Carlo averaging)."""
        rng = np.random.default_rng(9)
        pairs = rng.normal(size=(40, 2, 3))
        sigma = 1.0

        def mean_err(dim):
            errs = []
            for seed in range(5):
                mapper = FeatureMapper(3, output_dim=dim, sigma=sigma, seed=seed)
                for x, y in pairs:
                    approx = float(mapper.map(x) @ mapper.map(y))
                    errs.append(abs(approx - gaussian_kernel(x, y, sigma)))
            return np.mean(errs)

        assert mean_err(1024) < mean_err(64)

    def test_unbiased_over_mappers(self):
        """Averaging <z(x), z(y)> across many independent maps converges to
        the kernel value (unbiasedness of the feature expansion)."""
        x = np.array([0.3, -0.7])
        y = np.array([-0.2, 0.4])
        sigma = 0.9
        vals = [
            float(
                FeatureMapper(2, output_dim=8, sigma=sigma, seed=s).map(x)
                @ FeatureMapper(2, output_dim=8, sigma=sigma, seed=s).map(y)
            )
            for s in range(1000)
        ]
        assert np.mean(vals) == pytest.approx(gaussian_kernel(x, y, sigma), abs=0.02)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            FeatureMapper(0, 16)
        with pytest.raises(ValueError):
            FeatureMapper(2, 0)
        with pytest.raises(ValueError):
            FeatureMapper(2, 16, sigma=0.0)
        with pytest.raises(ValueError):
            FeatureMapper(2, 16, sigma=np.inf)

    def test_rejects_wrong_dimension(self):
        mapper = FeatureMapper(3, 8)
        with pytest.raises(ValueError, match="dimension"):
            mapper.map(np.ones(2))
        with pytest.raises(ValueError, match="dimension"):
            mapper.map_all(np.ones((4, 2)))

    def test_accepts_feature_matrix(self):
        X = FeatureMatrix(np.ones((3, 2)))
        mapper = FeatureMapper(2, 8)
        assert mapper.map_all(X).shape == (3, 8)


class TestIdentityMapper:
    def test_passthrough(self):
        X = np.arange(6, dtype=float).reshape(3, 2)
        mapper = IdentityMapper(2)
        np.testing.assert_array_equal(mapper.map_all(X), X)
        np.testing.assert_array_equal(mapper.map(X[1]), X[1])
        assert mapper.output_dim == 2
        assert mapper.sigma is None

    def test_returns_copy(self):
        X = np.ones((2, 2))
        out = IdentityMapper(2).map_all(X)
        out[0, 0] = 5.0
        assert X[0, 0] == 1.0


class TestMedianBandwidth:
    def test_matches_direct_median_small(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 3))
        dists = [
            np.linalg.norm(X[i] - X[j])
            for i in range(20)
            for j in range(i + 1, 20)
        ]
        assert median_bandwidth(X) == pytest.approx(np.median(dists))

    def test_subsample_is_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(2000, 2))
        assert median_bandwidth(X) == median_bandwidth(X)

    def test_degenerate_data_falls_back_to_one(self):
        assert median_bandwidth(np.zeros((5, 2))) == 1.0
        assert median_bandwidth(np.zeros((1, 2))) == 1.0
