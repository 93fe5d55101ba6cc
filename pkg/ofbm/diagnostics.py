"""
Monte Carlo verification: empirical covariances, z-score distances to analytic
targets, structural checks, and convergence studies across approximation levels.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.stats
from loguru import logger

from . import metrics
from .errors import InvalidInputError
from .exact_sampler import ExactSampler
from .linalg import as_operator, mat_power
from .model import CovMatrixFn, OfbmSpec, is_time_reversible_params, spectral_covariance
from .partial_sums import (
    PartialSumConfig,
    PartialSumSampler,
    StationaryCovSeq,
    asymptotic_en,
    check_antipersistent_sum,
    en_asymptotics,
    fgn_tail_coefficient,
)
from .paths import GridPath, check_grid, stack_values
from .quadrature import QuadratureConfig
from .rng import Role, RngStream
from .telegraph import TelegraphSampler, integrated_telegraph, sample_telegraph
from .workers import map_replicates

DEFAULT_SE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Empirical covariance and distances
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalCov:
    """
    Mean outer products E[X(t_i) X(t_j)'] over replicates, shape (m, m, d, d),
    with elementwise standard errors. antisymmetric_se is the standard error of
    the per-replicate X_a(t_i) X_c(t_j) - X_c(t_i) X_a(t_j).
    """

    grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: int
    antisymmetric_se: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.mean.shape[-1]


def _moment_se(second_moment: np.ndarray, mean: np.ndarray, count: int) -> np.ndarray:
    variance = (second_moment - mean**2) * count / (count - 1)
    return np.sqrt(np.clip(variance, 0.0, None) / count)


def empirical_covariance(paths: Sequence[GridPath]) -> EmpiricalCov:
    if len(paths) < 2:
        raise InvalidInputError(f"need at least 2 replicates, got {len(paths)}")
    X = stack_values(paths)
    M = X.shape[0]
    mean = np.einsum("ria,rjc->ijac", X, X, optimize=True) / M
    X2 = X**2
    second = np.einsum("ria,rjc->ijac", X2, X2, optimize=True) / M
    se = _moment_se(second, mean, M)

    # products X_ia X_jc X_ic X_ja give the cross term of the antisymmetric part
    cross = np.einsum("ria,rjc,ric,rja->ijac", X, X, X, X, optimize=True) / M
    swapped_second = np.swapaxes(second, 2, 3)
    anti_mean = mean - np.swapaxes(mean, 2, 3)
    anti_second = second + swapped_second - 2.0 * cross
    anti_se = _moment_se(anti_second, anti_mean, M)
    return EmpiricalCov(paths[0].grid, mean, se, M, anti_se)


@dataclass(frozen=True)
class DistanceResult:
    max_abs_err: float
    max_z: float
    max_se: float


def _target_values(target: Union[CovMatrixFn, np.ndarray], grid: np.ndarray) -> np.ndarray:
    if isinstance(target, CovMatrixFn):
        return target.on_grid(grid)
    return np.asarray(target, dtype=float)


def covariance_distance(emp: EmpiricalCov, target, se_floor: float = DEFAULT_SE_FLOOR) -> DistanceResult:
    """Largest |emp - target| and |emp - target| / SE over all grid pairs and entries."""
    values = _target_values(target, emp.grid)
    if values.shape != emp.mean.shape:
        raise InvalidInputError(f"target shape {values.shape} differs from {emp.mean.shape}")
    diff = np.abs(emp.mean - values)
    z = diff / np.maximum(emp.se, se_floor)
    return DistanceResult(float(diff.max()), float(z.max()), float(emp.se.max()))


def _paired_z(a: np.ndarray, se_a: np.ndarray, b: np.ndarray, se_b: np.ndarray, se_floor: float) -> float:
    se = np.maximum(np.sqrt(se_a**2 + se_b**2), se_floor)
    return float(np.max(np.abs(a - b) / se))


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------

def self_similarity_check(scaled_paths: Sequence[GridPath], c: float, D, reference: EmpiricalCov,
                          se_floor: float = DEFAULT_SE_FLOOR) -> float:
    """Max z between cov of c^{-D} X(c t) and the reference cov of X(t)."""
    if not (c > 0):
        raise InvalidInputError(f"scale factor must be positive, got {c}")
    scaled_grid = scaled_paths[0].grid
    if scaled_grid.shape != reference.grid.shape or not np.allclose(scaled_grid, c * reference.grid, rtol=1e-12, atol=0):
        raise InvalidInputError("scaled paths must be sampled at c times the reference grid")
    P = mat_power(c, -as_operator(D, "D"))
    transformed = [
        GridPath(reference.grid, p.values @ P.T, p.replicate_id, p.seed) for p in scaled_paths
    ]
    emp = empirical_covariance(transformed)
    return _paired_z(emp.mean, emp.se, reference.mean, reference.se, se_floor)


def holder_moment_slope(paths: Sequence[GridPath], moment_order: int = 2) -> float:
    """Least-squares slope of log E|X(t+h) - X(t)|^m against log h over dyadic lags."""
    if moment_order not in (2, 4):
        raise InvalidInputError(f"moment order must be 2 or 4, got {moment_order}")
    X = stack_values(paths)
    grid = paths[0].grid
    steps = np.diff(grid)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise InvalidInputError("moment scaling needs an equally spaced grid")
    lags = [k for k in (2**j for j in range(64)) if k < grid.size]
    if len(lags) < 3:
        raise InvalidInputError(f"need at least 3 dyadic lags, grid gives {len(lags)}")
    moments = []
    for k in lags:
        norms = np.linalg.norm(X[:, k:] - X[:, :-k], axis=-1)
        moments.append(np.mean(norms**moment_order))
    moments = np.asarray(moments)
    if np.any(moments <= 0):
        raise InvalidInputError("increment moments vanish; slope undefined")
    slope = np.polyfit(np.log(np.asarray(lags) * steps[0]), np.log(moments), 1)[0]
    return float(slope)


def reversibility_check(emp: EmpiricalCov, se_floor: float = DEFAULT_SE_FLOOR) -> float:
    """Max z of the antisymmetric part R(t, s) - R(t, s)' of every block."""
    anti = emp.mean - np.swapaxes(emp.mean, 2, 3)
    if emp.antisymmetric_se is not None:
        se = emp.antisymmetric_se
    else:
        se = np.sqrt(emp.se**2 + np.swapaxes(emp.se, 2, 3) ** 2)
    off = ~np.eye(emp.d, dtype=bool)
    if not np.any(off):
        return 0.0
    z = np.abs(anti) / np.maximum(se, se_floor)
    return float(z[..., off].max())


@dataclass(frozen=True)
class GaussianityResult:
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    skewness_z: float
    kurtosis_z: float

    @property
    def max_z(self) -> float:
        return max(self.skewness_z, self.kurtosis_z)


def gaussianity_check(paths: Sequence[GridPath], index: int = -1) -> GaussianityResult:
    """Skewness and excess kurtosis z-scores of each component at one grid point."""
    X = stack_values(paths)[:, index, :]
    M = X.shape[0]
    if M < 8:
        raise InvalidInputError(f"need at least 8 replicates for moment tests, got {M}")
    skew = scipy.stats.skew(X, axis=0)
    kurt = scipy.stats.kurtosis(X, axis=0, fisher=True)
    skew = np.nan_to_num(skew)
    kurt = np.nan_to_num(kurt)
    return GaussianityResult(
        skewness=skew,
        excess_kurtosis=kurt,
        skewness_z=float(np.max(np.abs(skew)) / math.sqrt(6.0 / M)),
        kurtosis_z=float(np.max(np.abs(kurt)) / math.sqrt(24.0 / M)),
    )


def stationary_increments_check(paths: Sequence[GridPath], shift_index: int,
                                se_floor: float = DEFAULT_SE_FLOOR) -> float:
    """Max z between the covariance of X(t + b) - X(b) and of X(t) - X(0), b = grid[shift_index]."""
    grid = paths[0].grid
    if grid[0] != 0:
        raise InvalidInputError("stationary increment check needs a grid starting at 0")
    if not (0 < shift_index < grid.size):
        raise InvalidInputError(f"shift index {shift_index} out of range")
    b = grid[shift_index]
    base, shifted = [], []
    for i, t in enumerate(grid):
        hits = np.flatnonzero(np.isclose(grid, t + b, rtol=0, atol=1e-12))
        if t > 0 and hits.size:
            base.append(i)
            shifted.append(int(hits[0]))
    if not base:
        raise InvalidInputError(f"no grid point t with t + {b} on the grid")
    sub_grid = grid[[0] + base]
    origin = [GridPath(sub_grid, np.vstack([np.zeros(p.d), p.values[base] - p.values[0]]), p.replicate_id, p.seed)
              for p in paths]
    moved = [GridPath(sub_grid, np.vstack([np.zeros(p.d), p.values[shifted] - p.values[shift_index]]),
                      p.replicate_id, p.seed) for p in paths]
    a = empirical_covariance(origin)
    c = empirical_covariance(moved)
    return _paired_z(a.mean, a.se, c.mean, c.se, se_floor)


@dataclass(frozen=True)
class BrownianLimitResult:
    times: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    max_z: float


def brownian_limit_check(n: float, times, replicates: int, stream: RngStream,
                         threads: int = 1) -> BrownianLimitResult:
    """Empirical variance of sqrt(n) int_0^t (-1)^{N(u)} du against t."""
    times = check_grid(times)
    if replicates < 2:
        raise InvalidInputError("need at least 2 replicates")
    horizon = float(times[-1]) if times[-1] > 0 else 1.0

    def one(i: int) -> np.ndarray:
        return integrated_telegraph(sample_telegraph(n, horizon, stream.child(i)), times)

    values = np.stack(map_replicates(one, replicates, threads))
    squares = values**2
    variance = squares.mean(axis=0)
    se = squares.std(axis=0, ddof=1) / math.sqrt(replicates)
    z = np.abs(variance - times) / np.maximum(se, DEFAULT_SE_FLOOR)
    z[times == 0] = 0.0
    return BrownianLimitResult(times, variance, se, float(z.max()))


def calibration_exceedance_rate(trials: int, replicates: int, stream: RngStream, grid=None,
                                threshold: float = 5.0, threads: int = 1) -> float:
    """Fraction of exact Brownian runs whose covariance max z exceeds the threshold."""
    grid = check_grid([0.0, 0.25, 0.5, 0.75, 1.0] if grid is None else grid)
    D = np.array([[0.5]])
    gamma = np.array([[1.0]])
    sampler = ExactSampler(grid, D, gamma)
    target = CovMatrixFn.reversible(D, gamma).on_grid(grid)
    exceed = 0
    for trial in range(trials):
        paths = sampler.sample_many(stream.child(trial), replicates, threads)
        if covariance_distance(empirical_covariance(paths), target).max_z > threshold:
            exceed += 1
    rate = exceed / trials if trials else 0.0
    logger.info(f"z calibration: {exceed}/{trials} runs above {threshold}")
    return rate


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------

class Scheme(Enum):
    EXACT = "exact"
    TELEGRAPH = "telegraph"
    PARTIAL_SUMS = "partial-sums"


@dataclass
class LevelResult:
    level: int
    replicates: int
    max_abs_err: float
    max_se: float
    max_z: float
    passed: bool
    limit_max_abs_err: float
    limit_max_z: float
    bias: Optional[float] = None
    fitted_scale: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "level": self.level,
            "replicates": self.replicates,
            "max_abs_err": self.max_abs_err,
            "max_se": self.max_se,
            "max_z": self.max_z,
            "pass": self.passed,
            "limit_max_abs_err": self.limit_max_abs_err,
            "limit_max_z": self.limit_max_z,
        }
        if self.bias is not None:
            out["oracle_limit_distance"] = self.bias
        if self.fitted_scale is not None:
            out["fitted_scale"] = self.fitted_scale
        return out


@dataclass
class ConvergenceReport:
    scheme: Scheme
    threshold: float
    target: str
    levels: List[LevelResult] = field(default_factory=list)
    structural: Dict[str, Optional[float]] = field(default_factory=dict)
    trend_decreasing: Optional[bool] = None
    paths: List[GridPath] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        ok = bool(self.levels) and all(lv.passed for lv in self.levels)
        if self.trend_decreasing is False:
            ok = False
        if self.scheme is Scheme.PARTIAL_SUMS and self.levels:
            ok = ok and self.levels[-1].limit_max_z <= self.threshold
        if self.scheme is Scheme.EXACT:
            checks = ("self_similarity_z", "reversibility_z", "gaussianity_z", "stationary_increments_z")
            ok = ok and all(self.structural.get(k) is None or self.structural[k] <= self.threshold for k in checks)
        return ok

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "pass": self.passed,
            "z_threshold": self.threshold,
            "target": self.target,
            "levels": [lv.to_dict() for lv in self.levels],
            "trend_decreasing": self.trend_decreasing,
            "structural": dict(self.structural),
        }


def _is_decreasing(distances: Sequence[float], atol: float) -> bool:
    return all(b < a or b <= atol for a, b in zip(distances, distances[1:]))


def _fitted_scale(emp: np.ndarray, target: np.ndarray) -> float:
    norm = float(np.sum(target * target))
    return float(np.sum(emp * target) / norm) if norm > 0 else 1.0


def _structural(paths: List[GridPath], emp: EmpiricalCov, reversible: bool,
                se_floor: float) -> Dict[str, Optional[float]]:
    out: Dict[str, Optional[float]] = {
        "reversibility_z": reversibility_check(emp, se_floor) if reversible else None,
        "gaussianity_z": gaussianity_check(paths).max_z if len(paths) >= 8 else None,
    }
    try:
        out["holder_slope"] = holder_moment_slope(paths, 2)
    except InvalidInputError:
        out["holder_slope"] = None
    return out


def run_convergence_study(scheme: Union[Scheme, str], model: Union[OfbmSpec, StationaryCovSeq],
                          levels: Sequence[int], grid, replicates: int, q: QuadratureConfig,
                          seed: int, *, z_threshold: float = 5.0, threads: int = 1,
                          self_similarity_c: float = 2.0, gamma=None,
                          se_floor: float = DEFAULT_SE_FLOOR) -> ConvergenceReport:
    """
    Simulate every level, compare the empirical covariance with the finite-level
    oracle (where one exists) and with the limit covariance.
    """
    scheme = Scheme(scheme)
    grid = check_grid(grid, require_zero_start=True)
    levels = [int(v) for v in levels] if scheme is not Scheme.EXACT else [1]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidInputError(f"levels must be increasing, got {levels}")
    if replicates < 2:
        raise InvalidInputError(f"need at least 2 replicates, got {replicates}")
    base = RngStream(seed)

    if scheme is Scheme.PARTIAL_SUMS:
        if not isinstance(model, StationaryCovSeq) or model.kind != "fgn-diagonal":
            raise InvalidInputError("partial-sum studies need a diagonal fGn covariance sequence")
        limit = CovMatrixFn.fbm(model.hurst, model.scales)
        reversible = True
    else:
        if not isinstance(model, OfbmSpec):
            raise InvalidInputError(f"{scheme.value} studies need an OfbmSpec")
        reversible = is_time_reversible_params(model)
        if scheme is Scheme.EXACT:
            if not reversible:
                raise InvalidInputError("exact sampling needs a time-reversible model")
            if gamma is None:
                gamma = spectral_covariance(1.0, 1.0, model, q)
            limit = CovMatrixFn.reversible(model.D, gamma)
        else:
            limit = CovMatrixFn.spectral(model, q)
    limit_values = limit.on_grid(grid)
    report = ConvergenceReport(scheme, z_threshold, limit.description)
    atol = 1e-9 * max(1.0, float(np.max(np.abs(limit_values))))

    for k, level in enumerate(levels):
        logger.info(f"{scheme.value}: level {level} with {replicates} replicates")
        stream = base.child(Role.NOISE, k)
        with metrics.LEVEL_SECONDS.labels(scheme.value).time():
            if scheme is Scheme.EXACT:
                sampler = ExactSampler(grid, model.D, gamma)
                oracle = None
            elif scheme is Scheme.TELEGRAPH:
                sampler = TelegraphSampler(model, level, grid, q)
                oracle = CovMatrixFn.finite_n(model, level, q).on_grid(grid)
            else:
                cfg = PartialSumConfig.for_fgn(level, model.hurst)
                sampler = PartialSumSampler(model, cfg, grid)
                oracle = CovMatrixFn.partial_sum(model, cfg).on_grid(grid)
            paths = sampler.sample_many(stream, replicates, threads)
        metrics.REPLICATES.labels(scheme.value).inc(replicates)
        emp = empirical_covariance(paths)

        reference = limit_values if oracle is None else oracle
        dist = covariance_distance(emp, reference, se_floor)
        scale = None
        limit_target = limit_values
        if scheme is Scheme.PARTIAL_SUMS:
            scale = _fitted_scale(emp.mean, limit_values)
            limit_target = scale * limit_values
        limit_dist = covariance_distance(emp, limit_target, se_floor)
        bias = None if oracle is None else float(np.max(np.abs(oracle - limit_values)))

        result = LevelResult(
            level=level,
            replicates=replicates,
            max_abs_err=dist.max_abs_err,
            max_se=dist.max_se,
            max_z=dist.max_z,
            passed=dist.max_z <= z_threshold,
            limit_max_abs_err=limit_dist.max_abs_err,
            limit_max_z=limit_dist.max_z,
            bias=bias,
            fitted_scale=scale,
        )
        report.levels.append(result)
        metrics.LEVEL_MAX_Z.labels(scheme.value, str(level)).set(result.max_z)
        logger.info(
            f"{scheme.value}: level {level} max |err| {result.max_abs_err:.4g}, "
            f"max z {result.max_z:.3f}, limit max z {result.limit_max_z:.3f}")

        if k == len(levels) - 1:
            report.paths = paths
            report.structural = _structural(paths, emp, reversible, se_floor)
            if scheme is Scheme.EXACT:
                report.structural.update(
                    _exact_structure(paths, emp, model.D, gamma, grid, base, replicates,
                                     self_similarity_c, threads, se_floor))
            elif scheme is Scheme.TELEGRAPH:
                driver = brownian_limit_check(level, grid, replicates, base.child(Role.DRIVER), threads)
                report.structural["brownian_limit_z"] = driver.max_z
            else:
                report.structural.update(_partial_sum_moments(model, level))

    if len(levels) > 1:
        if all(lv.bias is not None for lv in report.levels):
            distances = [lv.bias for lv in report.levels]
        else:
            distances = [lv.limit_max_abs_err for lv in report.levels]
        report.trend_decreasing = _is_decreasing(distances, atol)
    logger.info(f"{scheme.value}: study {'passed' if report.passed else 'FAILED'}")
    return report


def _exact_structure(paths, emp, D, gamma, grid, base: RngStream, replicates: int,
                     c: float, threads: int, se_floor: float) -> Dict[str, Optional[float]]:
    scaled = ExactSampler(c * grid, D, gamma).sample_many(base.child(Role.SCALED), replicates, threads)
    shift = np.flatnonzero(np.isclose(grid, 0.25, rtol=0, atol=1e-12))
    shift_index = int(shift[0]) if shift.size else 1
    try:
        increments = stationary_increments_check(paths, shift_index, se_floor)
    except InvalidInputError:
        increments = None
    return {
        "self_similarity_z": self_similarity_check(scaled, c, D, emp, se_floor),
        "stationary_increments_z": increments,
    }


def _partial_sum_moments(cov: StationaryCovSeq, N: int) -> Dict[str, Optional[float]]:
    """E_N against its diagonal asymptotics, and the lag-sum residual when every H < 1/2."""
    hurst, scales = cov.hurst, cov.scales
    en_error = None
    if np.all(hurst != 0.5):
        coefficient = np.array([fgn_tail_coefficient(H) for H in hurst]) * scales**2
        predicted = np.diagonal(asymptotic_en(hurst, coefficient, N))
        en_error = float(np.max(np.abs(np.diagonal(en_asymptotics(cov, N)) / predicted - 1.0)))
    residual = check_antipersistent_sum(cov, N).total if np.all(hurst < 0.5) else None
    return {"en_ratio_error": en_error, "antipersistent_residual": residual}
