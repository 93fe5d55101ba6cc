"""
Tests for the Poisson telegraph approximation and its finite-n covariance oracle.
"""

import math
import os
import sys

import numpy as np
import pytest
import scipy.stats

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))
from ofbm.diagnostics import brownian_limit_check, empirical_covariance, holder_moment_slope
from ofbm.errors import DomainError, InvalidInputError
from ofbm.model import Kernel, OfbmSpec, kernel_grid, spectral_covariance
from ofbm.quadrature import integrate, panel_layout
from ofbm.rng import Role, RngStream
from ofbm.telegraph import (
    KernelPrimitive,
    TelegraphPath,
    TelegraphSampler,
    finite_n_covariance,
    finite_n_covariance_grid,
    integrate_kernel_column,
    integrated_telegraph,
    sample_bundle,
    sample_telegraph,
    telegraph_sign_at,
)


@pytest.mark.unit
class TestTelegraphPaths:
    """Test jump-time sampling and sign evaluation."""

    def test_tiny_intensity_has_no_jumps(self, stream):
        """Test that n * x_max near 0 gives an empty jump list."""
        p = sample_telegraph(1e-9, 1.0, stream)
        assert p.jump_count == 0
        assert telegraph_sign_at(p, 0.7) == pytest.approx(math.sqrt(1e-9))

    def test_mean_jump_count(self, stream):
        """Test that the jump count has mean n * x_max."""
        counts = [sample_telegraph(100.0, 2.0, stream.child(i)).jump_count for i in range(2000)]
        assert abs(np.mean(counts) - 200.0) <= 5 * math.sqrt(200.0 / 2000)

    def test_gaps_are_exponential(self, stream):
        """Test inter-jump gaps against Exponential(n) with a KS test."""
        p = sample_telegraph(50.0, 200.0, stream)
        gaps = np.diff(p.jump_times)[:10000]
        assert gaps.size >= 9000
        result = scipy.stats.kstest(gaps, "expon", args=(0.0, 1.0 / 50.0))
        assert result.pvalue > 0.01

    def test_jumps_inside_domain(self, stream):
        """Test that jump times are strictly increasing inside (0, x_max)."""
        p = sample_telegraph(30.0, 5.0, stream)
        assert np.all(np.diff(p.jump_times) > 0)
        assert p.jump_times[0] > 0 and p.jump_times[-1] < 5.0

    def test_sign_parity(self):
        """Test the sign flips at each jump."""
        p = TelegraphPath(4.0, 1.0, [0.5])
        assert telegraph_sign_at(p, 0.4) == 2.0
        assert telegraph_sign_at(p, 0.6) == -2.0
        q = TelegraphPath(1.0, 1.0, [0.1, 0.2, 0.3])
        assert telegraph_sign_at(q, 0.25) == 1.0
        assert telegraph_sign_at(q, 0.35) == -1.0

    def test_second_moment_is_n(self, stream):
        """Test E[theta^2] = n at every point."""
        p = sample_telegraph(9.0, 3.0, stream)
        for x in (0.1, 1.0, 2.9):
            assert telegraph_sign_at(p, x) ** 2 == pytest.approx(9.0)

    def test_sign_outside_domain(self):
        """Test that x outside (0, x_max] is a domain error."""
        p = TelegraphPath(1.0, 1.0, [])
        with pytest.raises(DomainError):
            telegraph_sign_at(p, 0.0)
        with pytest.raises(DomainError):
            telegraph_sign_at(p, 1.5)

    def test_invalid_jump_times(self):
        """Test that unsorted or out-of-range jumps are rejected."""
        with pytest.raises(InvalidInputError):
            TelegraphPath(1.0, 1.0, [0.5, 0.2])
        with pytest.raises(InvalidInputError):
            TelegraphPath(1.0, 1.0, [1.0])

    def test_bad_intensity(self, stream):
        """Test that n <= 0 raises DomainError."""
        with pytest.raises(DomainError):
            sample_telegraph(0.0, 1.0, stream)

    def test_integrated_telegraph(self):
        """Test the running integral against hand values."""
        p = TelegraphPath(4.0, 2.0, [0.5])
        values = integrated_telegraph(p, [0.0, 0.25, 0.5, 1.0, 2.0])
        assert np.allclose(values, 2.0 * np.array([0.0, 0.25, 0.5, 0.0, -1.0]))

    def test_bundle_components_differ(self, stream):
        """Test that every bundle component has its own stream."""
        bundle = sample_bundle(2, 20.0, 3.0, stream)
        jumps = [p.jump_times for p in bundle.theta + bundle.theta_hat]
        assert len(jumps) == 4
        for i in range(4):
            for j in range(i + 1, 4):
                assert not (jumps[i].shape == jumps[j].shape and np.array_equal(jumps[i], jumps[j]))
        again = sample_telegraph(20.0, 3.0, stream.child(1, Role.THETA_HAT))
        assert np.array_equal(again.jump_times, bundle.theta_hat[1].jump_times)


@pytest.mark.unit
class TestKernelIntegrals:
    """Test kernel integrals over sign-constant segments."""

    def test_zero_time(self, brownian_spec, coarse_quad):
        """Test that t = 0 gives the zero vector."""
        p = TelegraphPath(4.0, coarse_quad.x_max, [1.0, 2.0])
        assert np.array_equal(integrate_kernel_column(Kernel.G1, brownian_spec, 0.0, 0, p, coarse_quad), np.zeros(1))

    def test_zero_jump_path(self, diagonal_spec, coarse_quad):
        """Test that a jump-free path gives sqrt(n) times the whole-axis integral."""
        p = TelegraphPath(4.0, coarse_quad.x_max, [])
        for kernel in Kernel:
            got = integrate_kernel_column(kernel, diagonal_spec, 0.8, 1, p, coarse_quad)
            direct = integrate(
                lambda x: kernel_grid(kernel, diagonal_spec, x, [0.8])[:, 0, :, 1],
                panel_layout(coarse_quad, 0.8), 1e-12, 4)
            assert np.allclose(got, 2.0 * direct.value, rtol=1e-9, atol=1e-12)

    def test_signed_sum_matches_segments(self, diagonal_spec, coarse_quad, stream):
        """Test that the O(#jumps) signed sum agrees with segment-by-segment integration."""
        p = sample_telegraph(3.0, coarse_quad.x_max, stream)
        times = np.array([0.25, 0.5, 1.0])
        primitive = KernelPrimitive(Kernel.G2, diagonal_spec, times, coarse_quad)
        fast = math.sqrt(p.intensity) * primitive.signed_sum(p.jump_times, 0)
        for i, t in enumerate(times):
            slow = integrate_kernel_column(Kernel.G2, diagonal_spec, t, 0, p, coarse_quad)
            assert np.allclose(fast[i], slow, rtol=1e-8, atol=1e-10)

    def test_domain_mismatch(self, brownian_spec, coarse_quad):
        """Test that the path domain must equal x_max."""
        p = TelegraphPath(4.0, 10.0, [])
        with pytest.raises(InvalidInputError):
            integrate_kernel_column(Kernel.G1, brownian_spec, 1.0, 0, p, coarse_quad)

    def test_column_range(self, brownian_spec, coarse_quad):
        """Test that the column index is checked."""
        p = TelegraphPath(4.0, coarse_quad.x_max, [])
        with pytest.raises(InvalidInputError):
            integrate_kernel_column(Kernel.G1, brownian_spec, 1.0, 1, p, coarse_quad)


@pytest.mark.unit
class TestTelegraphSampler:
    """Test X_n path sampling."""

    def test_zero_grid(self, brownian_spec, coarse_quad, stream):
        """Test that grid {0} gives a single zero vector."""
        path = TelegraphSampler(brownian_spec, 100, [0.0], coarse_quad).sample(stream)
        assert path.values.shape == (1, 1)
        assert path.values[0, 0] == 0.0

    def test_deterministic(self, diagonal_spec, coarse_quad, stream):
        """Test that equal streams give bit-identical paths."""
        sampler = TelegraphSampler(diagonal_spec, 50, [0.0, 0.5, 1.0], coarse_quad)
        a = sampler.sample(stream.child(3), 3)
        b = sampler.sample(stream.child(3), 3)
        c = sampler.sample(stream.child(4), 4)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)
        assert a.values[0].tolist() == [0.0, 0.0]

    def test_thread_count_does_not_change_output(self, brownian_spec, coarse_quad, stream):
        """Test that replicates are identical whatever the thread count."""
        sampler = TelegraphSampler(brownian_spec, 20, [0.0, 0.5, 1.0], coarse_quad)
        serial = sampler.sample_many(stream, 6, threads=1)
        parallel = sampler.sample_many(stream, 6, threads=3)
        assert [p.replicate_id for p in parallel] == list(range(6))
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.values, b.values)

    def test_invalid_model_rejected(self, coarse_quad):
        """Test that the sampler validates the model."""
        from ofbm.errors import InvalidModelError

        with pytest.raises(InvalidModelError):
            TelegraphSampler(OfbmSpec.diagonal([1.1]), 10, [0.0, 1.0], coarse_quad)


@pytest.mark.unit
class TestFiniteNCovariance:
    """Test the finite-n covariance oracle."""

    def test_zero_time(self, brownian_spec, coarse_quad):
        """Test that t = 0 gives the zero matrix."""
        assert np.array_equal(finite_n_covariance(brownian_spec, 50, 0.0, 1.0, coarse_quad), np.zeros((1, 1)))

    def test_converges_to_spectral(self, brownian_spec, coarse_quad):
        """Test that n = 1000 is within 2% of R(1, 1) = pi and the error shrinks with n."""
        errors = [abs(finite_n_covariance(brownian_spec, n, 1.0, 1.0, coarse_quad)[0, 0] - math.pi)
                  for n in (10, 100, 1000)]
        assert errors[2] <= 0.02 * math.pi
        assert errors[0] > errors[1] > errors[2]

    def test_grid_symmetry(self, diagonal_spec, coarse_quad):
        """Test that the oracle grid has transposed off-diagonal blocks."""
        grid = finite_n_covariance_grid(diagonal_spec, 20, [0.0, 0.5, 1.0], coarse_quad)
        assert not np.any(grid[0])
        assert np.allclose(grid[1, 2], grid[2, 1].T, rtol=1e-12, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(grid[2, 2]) > 0)

    def test_close_to_limit_for_large_n(self, diagonal_spec, coarse_quad):
        """Test that the oracle approaches the spectral covariance off the diagonal too."""
        oracle = finite_n_covariance(diagonal_spec, 500, 1.0, 0.5, coarse_quad)
        limit = spectral_covariance(1.0, 0.5, diagonal_spec, coarse_quad)
        assert np.allclose(oracle, limit, rtol=0.03, atol=0.03 * np.max(np.abs(limit)))

    def test_bad_intensity(self, brownian_spec, coarse_quad):
        """Test that n <= 0 raises DomainError."""
        with pytest.raises(DomainError):
            finite_n_covariance(brownian_spec, -1, 1.0, 1.0, coarse_quad)


@pytest.mark.slow
@pytest.mark.montecarlo
class TestTelegraphMonteCarlo:
    """Statistical checks on simulated telegraph paths."""

    def test_variance_matches_oracle(self, brownian_spec, coarse_quad):
        """Test Var X_n(1) at n = 500 against the finite-n oracle."""
        sampler = TelegraphSampler(brownian_spec, 500, [0.0, 1.0], coarse_quad)
        paths = sampler.sample_many(RngStream(11), 2000, threads=4)
        emp = empirical_covariance(paths)
        oracle = finite_n_covariance(brownian_spec, 500, 1.0, 1.0, coarse_quad)[0, 0]
        assert abs(emp.mean[1, 1, 0, 0] - oracle) <= 5 * emp.se[1, 1, 0, 0]

    def test_replicates_uncorrelated(self, brownian_spec, coarse_quad):
        """Test that consecutive replicates are uncorrelated."""
        sampler = TelegraphSampler(brownian_spec, 100, [0.0, 1.0], coarse_quad)
        values = np.array([p.values[1, 0] for p in sampler.sample_many(RngStream(12), 2000, threads=4)])
        products = values[:-1] * values[1:]
        se = products.std(ddof=1) / math.sqrt(products.size)
        assert abs(products.mean()) <= 4 * se

    def test_brownian_limit(self):
        """Test that Var of the integrated telegraph signal is t at n = 1e4."""
        result = brownian_limit_check(1e4, [0.0, 0.25, 0.5, 1.0], 5000, RngStream(13), threads=4)
        assert result.max_z <= 5.0

    def test_holder_slope(self, coarse_quad):
        """Test the second-moment scaling exponent at n = 1000, H = 0.7."""
        spec = OfbmSpec.diagonal([0.7])
        grid = np.linspace(0.0, 1.0, 17)
        paths = TelegraphSampler(spec, 1000, grid, coarse_quad).sample_many(RngStream(14), 1000, threads=4)
        assert 1.2 <= holder_moment_slope(paths, 2) <= 1.6
