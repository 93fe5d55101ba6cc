"""
Panel Gauss-Legendre quadrature on the half line.

Panels are graded geometrically towards x = 0, where the spectral kernels carry
an integrable power singularity, and uniform further out so that each panel
sees at most half a period of the oscillating factors.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from loguru import logger
from numpy.polynomial import legendre

from .errors import InvalidInputError, NumericalFailure

GL_ORDER = 16
GL_NODES, GL_WEIGHTS = legendre.leggauss(GL_ORDER)

# c = LEGENDRE_FROM_NODES @ f maps node values to Legendre coefficients; exact
# for polynomials of degree < GL_ORDER.
LEGENDRE_FROM_NODES = (
    (2 * np.arange(GL_ORDER) + 1)[:, None] / 2.0
    * legendre.legvander(GL_NODES, GL_ORDER - 1).T
    * GL_WEIGHTS[None, :]
)


@dataclass(frozen=True)
class QuadratureConfig:
    x_max: float = 1e4
    rel_tol: float = 1e-8
    panels_near_zero: int = 40
    grading_ratio: float = 0.5
    max_refinements: int = 4
    tail_correction: bool = True

    def __post_init__(self):
        if not (self.x_max >= 1 and math.isfinite(self.x_max)):
            raise InvalidInputError(f"x_max must be >= 1, got {self.x_max}")
        if not (1e-12 <= self.rel_tol <= 1e-2):
            raise InvalidInputError(f"rel_tol must lie in [1e-12, 1e-2], got {self.rel_tol}")
        if self.panels_near_zero < 1:
            raise InvalidInputError(f"panels_near_zero must be positive, got {self.panels_near_zero}")
        if not (0 < self.grading_ratio < 1):
            raise InvalidInputError(f"grading_ratio must lie in (0, 1), got {self.grading_ratio}")
        if self.max_refinements < 0:
            raise InvalidInputError(f"max_refinements must be >= 0, got {self.max_refinements}")

    def replace(self, **changes) -> "QuadratureConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PanelLayout:
    """Consecutive panels [edges[p], edges[p+1]] with a Gauss-Legendre rule on each."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise InvalidInputError("panel edges must be strictly increasing with at least one panel")
        object.__setattr__(self, "edges", edges)

    @property
    def count(self) -> int:
        return self.edges.size - 1

    @property
    def left(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def nodes(self) -> np.ndarray:
        """Node abscissae, shape (panels, GL_ORDER)."""
        return self.left[:, None] + 0.5 * self.widths[:, None] * (GL_NODES[None, :] + 1.0)

    @property
    def weights(self) -> np.ndarray:
        return 0.5 * self.widths[:, None] * GL_WEIGHTS[None, :]

    def refined(self) -> "PanelLayout":
        """Every panel split in two."""
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        edges = np.empty(2 * self.count + 1)
        edges[0::2] = self.edges
        edges[1::2] = mid
        return PanelLayout(edges)

    def subdivided(self, max_width: float) -> "PanelLayout":
        """Split panels into equal pieces no wider than max_width."""
        pieces = np.maximum(1, np.ceil(self.widths / max_width - 1e-9)).astype(int)
        parts = [
            a + (b - a) * np.arange(k) / k
            for a, b, k in zip(self.edges[:-1], self.edges[1:], pieces)
        ]
        return PanelLayout(np.concatenate(parts + [self.edges[-1:]]))

    def locate(self, x) -> np.ndarray:
        """Index of the panel holding each x (clipped to the layout)."""
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, self.count - 1)


@dataclass(frozen=True)
class QuadratureResult:
    value: np.ndarray
    error: float
    layout: PanelLayout


def panel_layout(q: QuadratureConfig, time_scale: float = 1.0) -> PanelLayout:
    """Graded panels on (0, pi/T] followed by width pi/T panels up to q.x_max, T = max(time_scale, 1)."""
    width = math.pi / max(time_scale, 1.0)
    graded = width * q.grading_ratio ** np.arange(q.panels_near_zero, 0, -1)
    uniform = width * np.arange(1, int(q.x_max // width) + 1)
    interior = np.concatenate([graded, uniform])
    interior = interior[interior < q.x_max * (1 - 1e-12)]
    return PanelLayout(np.concatenate([[0.0], interior, [q.x_max]]))


def uniform_layout(start: float, stop: float, width: float) -> PanelLayout:
    if not (stop > start) or width <= 0:
        raise InvalidInputError(f"bad uniform layout [{start}, {stop}] width {width}")
    count = max(1, int(math.ceil((stop - start) / width - 1e-9)))
    return PanelLayout(np.linspace(start, stop, count + 1))


def apply_rule(func: Callable[[np.ndarray], np.ndarray], layout: PanelLayout) -> np.ndarray:
    """Sum of w * func(x) over every node of the layout."""
    x = layout.nodes.ravel()
    w = layout.weights.ravel()
    values = np.asarray(func(x))
    return np.tensordot(w, values, axes=(0, 0))


def integrate(func: Callable[[np.ndarray], np.ndarray], layout: PanelLayout,
              rel_tol: float, max_refinements: int, abs_tol: float = 0.0) -> QuadratureResult:
    """func maps abscissae of shape (K,) to values of shape (K, ...)."""
    return integrate_rule(lambda lay: apply_rule(func, lay), layout, rel_tol, max_refinements, abs_tol)


def integrate_rule(rule: Callable[[PanelLayout], np.ndarray], layout: PanelLayout,
                   rel_tol: float, max_refinements: int, abs_tol: float = 0.0) -> QuadratureResult:
    """
    Apply rule to the layout, halving every panel until two successive
    estimates agree to rel_tol (relative to the largest entry of the result).
    """
    value = rule(layout)
    error = math.inf
    for level in range(max_refinements + 1):
        finer = layout.refined()
        refined_value = rule(finer)
        error = float(np.max(np.abs(refined_value - value))) if np.size(value) else 0.0
        scale = float(np.max(np.abs(refined_value))) if np.size(value) else 0.0
        logger.debug(f"quadrature level {level}: {finer.count} panels, error {error:.3e}")
        if error <= rel_tol * scale + abs_tol:
            return QuadratureResult(refined_value, error, finer)
        layout, value = finer, refined_value
    raise NumericalFailure(
        f"quadrature did not reach relative tolerance {rel_tol:.1e} "
        f"after {max_refinements} refinements (error {error:.3e})",
        achieved_error=error,
    )


def legendre_coefficients(values: np.ndarray) -> np.ndarray:
    """Legendre coefficients from node values laid out as (panels, GL_ORDER, ...)."""
    return np.einsum("ki,pi...->pk...", LEGENDRE_FROM_NODES, values)
