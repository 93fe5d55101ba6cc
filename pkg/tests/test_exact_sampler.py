"""
Tests for exact grid sampling of time-reversible models.
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))
from ofbm.diagnostics import (
    empirical_covariance,
    gaussianity_check,
    holder_moment_slope,
    self_similarity_check,
    stationary_increments_check,
)
from ofbm.errors import InvalidInputError, NotPositiveSemidefiniteError
from ofbm.exact_sampler import ExactSampler, GridCovariance, build_grid_covariance, sample_exact
from ofbm.paths import stack_values
from ofbm.rng import Role

BROWNIAN_D = np.array([[0.5]])
UNIT = np.array([[1.0]])
D2 = np.diag([0.7, 0.6])
GAMMA2 = np.array([[1.0, 0.3], [0.3, 1.0]])


@pytest.mark.unit
class TestGridCovariance:
    """Test the dense covariance of a grid."""

    def test_single_time_one(self):
        """Test that the grid {1} gives Gamma itself."""
        matrix = build_grid_covariance([1.0], D2, GAMMA2)
        assert np.allclose(matrix, GAMMA2, atol=1e-14)

    def test_brownian_min_matrix(self):
        """Test D = 1/2, Gamma = 1 gives min(t, s)."""
        grid = [0.25, 0.5, 1.0]
        matrix = build_grid_covariance(grid, BROWNIAN_D, UNIT)
        expected = np.minimum.outer(grid, grid)
        assert np.allclose(matrix, expected, atol=1e-14)

    def test_block_symmetry(self):
        """Test that block (i, j) is the transpose of block (j, i)."""
        grid = [0.25, 0.5, 1.0]
        matrix = build_grid_covariance(grid, D2, GAMMA2).reshape(3, 2, 3, 2)
        for i in range(3):
            for j in range(3):
                assert np.allclose(matrix[i, :, j, :], matrix[j, :, i, :].T)

    def test_cross_block_half_gamma(self):
        """Test E[X(1) X(1/2)'] = Gamma / 2 since |1 - 1/2| = 1/2."""
        matrix = build_grid_covariance([0.5, 1.0], D2, GAMMA2).reshape(2, 2, 2, 2)
        assert np.allclose(matrix[1, :, 0, :], 0.5 * GAMMA2, atol=1e-14)

    def test_zero_time_excluded_from_factor(self):
        """Test that t = 0 rows are dropped from the factorization."""
        cov = GridCovariance.build([0.0, 0.5, 1.0], BROWNIAN_D, UNIT)
        assert cov.factor.shape == (2, 2)
        assert cov.active.tolist() == [1, 2]

    def test_invalid_pair_rejected(self):
        """Test that an indefinite Gamma fails the factorization."""
        with pytest.raises(NotPositiveSemidefiniteError):
            build_grid_covariance([1.0], np.diag([0.5, 0.5]), [[1.0, 2.0], [2.0, 1.0]])

    def test_dimension_mismatch(self):
        """Test that D and Gamma must agree in size."""
        with pytest.raises(InvalidInputError):
            build_grid_covariance([1.0], D2, UNIT)

    def test_matrix_read_only(self):
        """Test that the cached covariance cannot be modified."""
        cov = GridCovariance.build([0.5, 1.0], BROWNIAN_D, UNIT)
        with pytest.raises(ValueError):
            cov.matrix[0, 0] = 2.0


@pytest.mark.unit
class TestExactSampler:
    """Test replicate generation."""

    def test_zero_count(self, stream):
        """Test that count = 0 returns an empty list."""
        assert sample_exact([0.5, 1.0], BROWNIAN_D, UNIT, count=0, stream=stream) == []

    def test_negative_count(self, stream):
        """Test that a negative count is rejected."""
        with pytest.raises(InvalidInputError):
            ExactSampler([1.0], BROWNIAN_D, UNIT).sample_many(stream, -1)

    def test_origin_is_zero(self, stream, dyadic_grid):
        """Test that every path vanishes at t = 0."""
        paths = sample_exact(dyadic_grid, D2, GAMMA2, count=5, stream=stream)
        for path in paths:
            assert np.all(path.values[0] == 0.0)
            assert path.values.shape == (dyadic_grid.size, 2)

    def test_deterministic(self, stream, dyadic_grid):
        """Test that equal seeds give identical paths."""
        a = sample_exact(dyadic_grid, D2, GAMMA2, count=4, stream=stream)
        b = sample_exact(dyadic_grid, D2, GAMMA2, count=4, stream=stream)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))

    def test_thread_count_irrelevant(self, stream, dyadic_grid):
        """Test that replicate i does not depend on the worker count."""
        sampler = ExactSampler(dyadic_grid, D2, GAMMA2)
        serial = sampler.sample_many(stream, 12, threads=1)
        pooled = sampler.sample_many(stream, 12, threads=4)
        assert [p.replicate_id for p in pooled] == list(range(12))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(serial, pooled))

    def test_replicates_differ(self, stream):
        """Test that distinct replicates use distinct streams."""
        paths = sample_exact([1.0], BROWNIAN_D, UNIT, count=2, stream=stream)
        assert paths[0].values[0, 0] != paths[1].values[0, 0]

    def test_default_gamma(self, stream, quad):
        """Test that a missing Gamma falls back to the spectral covariance at time 1."""
        paths = sample_exact([1.0], BROWNIAN_D, count=1, stream=stream, q=quad)
        assert paths[0].values.shape == (1, 1)


@pytest.mark.slow
@pytest.mark.montecarlo
class TestExactMonteCarlo:
    """Monte Carlo checks of exact samples."""

    def test_brownian_variance(self, stream):
        """Test Var X(1) = 1 within 5 SE over 20000 Brownian replicates."""
        M = 20000
        paths = sample_exact([0.5, 1.0], BROWNIAN_D, UNIT, count=M, stream=stream)
        x = stack_values(paths)[:, 1, 0]
        squares = x**2
        se = squares.std(ddof=1) / math.sqrt(M)
        assert abs(squares.mean() - 1.0) <= 5 * se

    def test_cross_covariance(self, stream):
        """Test E[X(1) X(1/2)'] against Gamma / 2 in two dimensions."""
        M = 20000
        paths = sample_exact([0.5, 1.0], D2, GAMMA2, count=M, stream=stream)
        X = stack_values(paths)
        products = X[:, 1, :, None] * X[:, 0, None, :]
        mean = products.mean(axis=0)
        se = products.std(axis=0, ddof=1) / math.sqrt(M)
        assert np.all(np.abs(mean - 0.5 * GAMMA2) <= 5 * se)

    def test_structure(self, stream, dyadic_grid):
        """Test self-similarity, stationary increments and Gaussianity of exact samples."""
        M = 4000
        sampler = ExactSampler(dyadic_grid, D2, GAMMA2)
        paths = sampler.sample_many(stream.child(Role.NOISE), M)
        emp = empirical_covariance(paths)

        scaled = ExactSampler(2.0 * dyadic_grid, D2, GAMMA2).sample_many(stream.child(Role.SCALED), M)
        assert self_similarity_check(scaled, 2.0, D2, emp) <= 5.0
        assert stationary_increments_check(paths, 2) <= 5.0
        assert gaussianity_check(paths).max_z <= 5.0

    def test_wrong_exponent_detected(self, stream, dyadic_grid):
        """Test that rescaling with H = 0.5 instead of the true 0.7 fails the self-similarity check."""
        M = 4000
        D, gamma = np.array([[0.7]]), UNIT
        paths = ExactSampler(dyadic_grid, D, gamma).sample_many(stream.child(Role.NOISE), M)
        scaled = ExactSampler(2.0 * dyadic_grid, D, gamma).sample_many(stream.child(Role.SCALED), M)
        emp = empirical_covariance(paths)
        assert self_similarity_check(scaled, 2.0, D, emp) <= 5.0
        assert self_similarity_check(scaled, 2.0, BROWNIAN_D, emp) > 5.0

    @pytest.mark.parametrize("H,expected", [(0.5, 1.0), (0.7, 1.4)])
    def test_moment_slope(self, stream, H, expected):
        """Test that E|X(t+h) - X(t)|^2 scales like h^{2H} for scalar fBm."""
        grid = np.linspace(0.0, 1.0, 33)
        paths = sample_exact(grid, [[H]], UNIT, count=2000, stream=stream)
        assert holder_moment_slope(paths, 2) == pytest.approx(expected, abs=0.1)
