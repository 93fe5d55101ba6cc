"""Sampled paths on a fixed time grid."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError


def check_grid(grid, require_zero_start: bool = False) -> np.ndarray:
    """Strictly increasing, non-negative, finite time grid as a read-only array."""
    grid = np.array(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise InvalidInputError("time grid is empty")
    if not np.all(np.isfinite(grid)) or grid[0] < 0:
        raise InvalidInputError("time grid must be finite and non-negative")
    if np.any(np.diff(grid) <= 0):
        raise InvalidInputError("time grid must be strictly increasing")
    if require_zero_start and grid[0] != 0:
        raise InvalidInputError("time grid must start at 0")
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True, eq=False)
class GridPath:
    grid: np.ndarray
    values: np.ndarray
    replicate_id: int = 0
    seed: int = 0

    def __post_init__(self):
        grid = check_grid(self.grid)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != grid.size:
            raise InvalidInputError(
                f"path values shape {values.shape} does not match {grid.size} grid points")
        if grid[0] == 0 and np.any(values[0] != 0):
            raise InvalidInputError("path must vanish at t = 0")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]


def stack_values(paths: Sequence[GridPath]) -> np.ndarray:
    """Values of paths sharing one grid, shape (M, m, d)."""
    if not paths:
        raise InvalidInputError("no paths given")
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid.shape != grid.shape or np.any(p.grid != grid) or p.d != paths[0].d:
            raise InvalidInputError("paths do not share a common grid and dimension")
    return np.stack([p.values for p in paths])
