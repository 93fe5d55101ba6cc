"""Exact Gaussian sampling of a time-reversible OFBM on a finite grid."""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from loguru import logger

from .errors import InvalidInputError
from .linalg import as_operator, cholesky_psd
from .model import gamma_mason_xiao, reversible_covariance_grid
from .paths import GridPath, check_grid
from .quadrature import QuadratureConfig
from .rng import RngStream
from .workers import map_replicates

__all__ = ["GridPath", "GridCovariance", "build_grid_covariance", "ExactSampler", "sample_exact"]


def build_grid_covariance(grid, D, Gamma) -> np.ndarray:
    """
    Dense (m*d) x (m*d) covariance of (X(t_1), ..., X(t_m)) stacked by time.

    The factorizability of the blocks at nonzero times is checked here, so an
    invalid (D, Gamma) pair fails early with NotPositiveSemidefiniteError.
    """
    return GridCovariance.build(grid, D, Gamma).matrix


@dataclass(frozen=True, eq=False)
class GridCovariance:
    grid: np.ndarray
    matrix: np.ndarray
    factor: np.ndarray
    active: np.ndarray
    d: int
    jitter: float

    @classmethod
    def build(cls, grid, D, Gamma) -> "GridCovariance":
        grid = check_grid(grid)
        D = as_operator(D, "D")
        Gamma = as_operator(Gamma, "Gamma")
        if D.shape != Gamma.shape:
            raise InvalidInputError("D and Gamma must share a dimension")
        m, d = grid.size, D.shape[0]
        blocks = reversible_covariance_grid(grid, D, Gamma)
        matrix = blocks.transpose(0, 2, 1, 3).reshape(m * d, m * d)
        matrix = 0.5 * (matrix + matrix.T)

        # t = 0 carries a deterministic zero; factor the rest
        active = np.flatnonzero(grid != 0)
        rows = (active[:, None] * d + np.arange(d)[None, :]).ravel()
        if rows.size:
            result = cholesky_psd(matrix[np.ix_(rows, rows)])
            factor, jitter = result.factor, result.jitter
        else:
            factor, jitter = np.zeros((0, 0)), 0.0
        logger.debug(f"grid covariance {m * d}x{m * d}, factor jitter {jitter:.0e}")
        matrix.setflags(write=False)
        return cls(grid, matrix, factor, active, d, jitter)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        values = np.zeros((self.grid.size, self.d))
        if self.active.size:
            z = rng.standard_normal(self.factor.shape[0])
            values[self.active] = (self.factor @ z).reshape(self.active.size, self.d)
        return values


class ExactSampler:
    """Factorizes once, then draws replicates from per-replicate streams."""

    def __init__(self, grid, D, Gamma):
        self.covariance = GridCovariance.build(grid, D, Gamma)

    @property
    def grid(self) -> np.ndarray:
        return self.covariance.grid

    def sample(self, stream: RngStream, replicate_id: int = 0) -> GridPath:
        return GridPath(self.grid, self.covariance.draw(stream.generator()), replicate_id, stream.seed)

    def sample_many(self, stream: RngStream, count: int, threads: int = 1) -> List[GridPath]:
        if count < 0:
            raise InvalidInputError(f"replicate count must be non-negative, got {count}")
        return map_replicates(lambda i: self.sample(stream.child(i), i), count, threads)


def sample_exact(grid, D, Gamma=None, count: int = 1, stream: Optional[RngStream] = None,
                 threads: int = 1, q: Optional[QuadratureConfig] = None) -> List[GridPath]:
    """count replicates; Gamma defaults to the Mason-Xiao covariance at time 1."""
    if Gamma is None:
        Gamma = gamma_mason_xiao(D, q or QuadratureConfig())
    stream = stream or RngStream(0)
    return ExactSampler(grid, D, Gamma).sample_many(stream, count, threads)
