"""
Poisson telegraph approximation.

    X_n(t) = int_0^x_max G1(x, t) theta_n(x) dx + int_0^x_max G2(x, t) theta_hat_n(x) dx

with theta_n = sqrt(n) (-1)^{N_n(x)} built from independent rate-n Poisson
processes, one per column and role. The kernel integrals are evaluated from
piecewise Legendre antiderivatives, so a path costs O(#jumps) per column.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
import scipy.signal
from loguru import logger
from numpy.polynomial import legendre

from .errors import DomainError, InvalidInputError
from .model import Kernel, OfbmSpec, kernel_grid, require_exponent, require_valid
from .paths import GridPath, check_grid
from .quadrature import (
    GL_ORDER,
    LEGENDRE_FROM_NODES,
    PanelLayout,
    QuadratureConfig,
    integrate_rule,
    legendre_coefficients,
    panel_layout,
)
from .rng import Role, RngStream
from .workers import map_replicates

MIN_SEGMENT = 1e-12

# Panels of the finite-n oracle satisfy n * width <= MAX_PANEL_DECAY.
MAX_PANEL_DECAY = 4.0


@dataclass(frozen=True, eq=False)
class TelegraphPath:
    intensity: float
    domain_end: float
    jump_times: np.ndarray
    initial_sign: int = 1

    def __post_init__(self):
        if not (self.intensity > 0) or not (self.domain_end > 0):
            raise InvalidInputError("telegraph intensity and domain end must be positive")
        if self.initial_sign != 1:
            raise InvalidInputError("telegraph paths start with sign +1")
        jumps = np.array(self.jump_times, dtype=float).reshape(-1)
        if jumps.size and (jumps[0] <= 0 or jumps[-1] >= self.domain_end or np.any(np.diff(jumps) <= 0)):
            raise InvalidInputError("jump times must be strictly increasing inside (0, domain_end)")
        jumps.setflags(write=False)
        object.__setattr__(self, "jump_times", jumps)

    @property
    def jump_count(self) -> int:
        return self.jump_times.size


@dataclass(frozen=True, eq=False)
class TelegraphBundle:
    theta: Tuple[TelegraphPath, ...]
    theta_hat: Tuple[TelegraphPath, ...]
    stream: RngStream


def _merge_short_segments(jumps: np.ndarray) -> np.ndarray:
    """Drop both ends of any segment shorter than MIN_SEGMENT; the sign outside it is unchanged."""
    short = np.flatnonzero(np.diff(jumps) < MIN_SEGMENT)
    if short.size == 0:
        return jumps
    keep = np.ones(jumps.size, dtype=bool)
    for k in short:
        if keep[k] and keep[k + 1]:
            keep[k] = keep[k + 1] = False
    return jumps[keep]


def sample_telegraph(n: float, x_max: float, stream: RngStream) -> TelegraphPath:
    """Jump times of a rate-n Poisson process on (0, x_max]."""
    if not (n > 0) or not (x_max > 0):
        raise DomainError(f"telegraph needs n > 0 and x_max > 0, got n={n}, x_max={x_max}")
    rng = stream.generator()
    count = rng.poisson(n * x_max)
    jumps = np.sort(rng.uniform(0.0, x_max, count))
    jumps = jumps[(jumps > 0) & (jumps < x_max)]
    return TelegraphPath(float(n), float(x_max), _merge_short_segments(jumps))


def sample_bundle(d: int, n: float, x_max: float, stream: RngStream) -> TelegraphBundle:
    theta = tuple(sample_telegraph(n, x_max, stream.child(j, Role.THETA)) for j in range(d))
    theta_hat = tuple(sample_telegraph(n, x_max, stream.child(j, Role.THETA_HAT)) for j in range(d))
    return TelegraphBundle(theta, theta_hat, stream)


def telegraph_sign_at(p: TelegraphPath, x: float) -> float:
    if not (0 < x <= p.domain_end):
        raise DomainError(f"x={x} outside (0, {p.domain_end}]")
    flips = int(np.searchsorted(p.jump_times, x, side="right"))
    return math.sqrt(p.intensity) * (-1.0) ** flips


def integrated_telegraph(p: TelegraphPath, times) -> np.ndarray:
    """sqrt(n) int_0^t (-1)^{N(u)} du at every t in times."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > p.domain_end):
        raise DomainError(f"times must lie in [0, {p.domain_end}]")
    starts = np.concatenate([[0.0], p.jump_times])
    signs = (-1.0) ** np.arange(starts.size)
    lengths = np.diff(np.concatenate([starts, [p.domain_end]]))
    cumulative = np.concatenate([[0.0], np.cumsum(signs * lengths)])
    k = np.searchsorted(p.jump_times, times, side="right")
    return math.sqrt(p.intensity) * (cumulative[k] + signs[k] * (times - starts[k]))


# ---------------------------------------------------------------------------
# Kernel antiderivatives
# ---------------------------------------------------------------------------

class KernelPrimitive:
    """F(x) = int_0^x G(y, t) dy for a fixed set of times, piecewise Legendre on the panel layout."""

    def __init__(self, kernel: Kernel, spec: OfbmSpec, times, q: QuadratureConfig):
        times = np.asarray(times, dtype=float)
        self.kernel = kernel
        self.times = times
        self.layout = panel_layout(q, float(np.max(np.abs(times))) if times.size else 1.0)
        P = self.layout.count
        m, d = times.size, spec.d

        x = self.layout.nodes.ravel()
        values = kernel_grid(kernel, spec, x, times).reshape(P, GL_ORDER, m, d, d)
        half = 0.5 * self.layout.widths
        coeffs = legendre_coefficients(values)
        self.coefficients = legendre.legint(coeffs, m=1, lbnd=-1, axis=1) * half[:, None, None, None, None]
        panel_integrals = np.einsum("pi,pi...->p...", self.layout.weights, values)
        cumulative = np.cumsum(panel_integrals, axis=0)
        self.left_values = np.concatenate([np.zeros((1, m, d, d)), cumulative[:-1]])
        self.total = cumulative[-1]
        logger.debug(f"{kernel.value} primitive: {P} panels, {m} times")

    def _local(self, x: np.ndarray):
        p = self.layout.locate(x)
        u = 2.0 * (x - self.layout.left[p]) / self.layout.widths[p] - 1.0
        return p, legendre.legvander(u, GL_ORDER)

    def column_values(self, x, column: int) -> np.ndarray:
        """F(x) e_j at each point, shape (K, m, d)."""
        x = np.asarray(x, dtype=float)
        p, V = self._local(x)
        local = np.einsum("kc,kcmd->kmd", V, self.coefficients[p][..., column])
        return self.left_values[p][..., column] + local

    def segment_integrals(self, points, column: int) -> np.ndarray:
        """int G e_j over consecutive [points[k], points[k+1]], shape (K-1, m, d)."""
        return np.diff(self.column_values(points, column), axis=0)

    def signed_sum(self, jumps: np.ndarray, column: int) -> np.ndarray:
        """
        int_0^x_max G e_j (-1)^{N(x)} dx for the given jump times, shape (m, d).

        Uses sum_k s_k (F(tau_{k+1}) - F(tau_k)) = s_K F(x_max) + sum_k 2 s_{k-1} F(tau_k).
        """
        K = jumps.size
        end_sign = -1.0 if K % 2 else 1.0
        out = end_sign * self.total[..., column]
        if K == 0:
            return out
        weights = 2.0 * np.where(np.arange(K) % 2 == 0, 1.0, -1.0)
        p, V = self._local(jumps)
        starts = np.flatnonzero(np.concatenate([[True], p[1:] != p[:-1]]))
        grouped_V = np.add.reduceat(V * weights[:, None], starts, axis=0)
        grouped_w = np.add.reduceat(weights, starts)
        panels = p[starts]
        out = out + np.einsum("gc,gcmd->md", grouped_V, self.coefficients[panels][..., column])
        out = out + np.einsum("g,gmd->md", grouped_w, self.left_values[panels][..., column])
        return out


def integrate_kernel_column(kernel: Kernel, spec: OfbmSpec, t: float, column: int,
                            p: TelegraphPath, q: QuadratureConfig) -> np.ndarray:
    """sqrt(n) * sum over sign-constant segments of (int_segment G(x, t) e_j dx) * sign."""
    if not math.isclose(p.domain_end, q.x_max, rel_tol=1e-12):
        raise InvalidInputError(f"path domain {p.domain_end} differs from x_max {q.x_max}")
    if not (0 <= column < spec.d):
        raise InvalidInputError(f"column {column} out of range for d={spec.d}")
    if t == 0:
        return np.zeros(spec.d)
    primitive = KernelPrimitive(kernel, spec, [t], q)
    points = np.concatenate([[0.0], p.jump_times, [p.domain_end]])
    segments = primitive.segment_integrals(points, column)[:, 0]
    signs = np.where(np.arange(segments.shape[0]) % 2 == 0, 1.0, -1.0)
    return math.sqrt(p.intensity) * (signs @ segments)


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------

class TelegraphSampler:
    """Samples X_n on a grid; kernel antiderivatives are built once and shared by all replicates."""

    def __init__(self, spec: OfbmSpec, n: float, grid, q: QuadratureConfig, validate: bool = True):
        if not (n > 0):
            raise DomainError(f"telegraph intensity must be positive, got {n}")
        self.grid = check_grid(grid, require_zero_start=True)
        if validate:
            require_valid(spec, q)
        self.spec = spec
        self.n = float(n)
        self.q = q
        self._primitives: Dict[Kernel, KernelPrimitive] = {}
        if np.any(self.grid > 0):
            self._primitives = {k: KernelPrimitive(k, spec, self.grid, q) for k in Kernel}

    def sample(self, stream: RngStream, replicate_id: int = 0) -> GridPath:
        d = self.spec.d
        values = np.zeros((self.grid.size, d))
        if self._primitives:
            bundle = sample_bundle(d, self.n, self.q.x_max, stream)
            for j in range(d):
                values += self._primitives[Kernel.G1].signed_sum(bundle.theta[j].jump_times, j)
                values += self._primitives[Kernel.G2].signed_sum(bundle.theta_hat[j].jump_times, j)
            values *= math.sqrt(self.n)
            values[self.grid == 0] = 0.0
        return GridPath(self.grid, values, replicate_id, stream.seed)

    def sample_many(self, stream: RngStream, count: int, threads: int = 1) -> List[GridPath]:
        return map_replicates(lambda i: self.sample(stream.child(i), i), count, threads)


def sample_xn(spec: OfbmSpec, n: float, grid, q: QuadratureConfig, stream: RngStream) -> GridPath:
    return TelegraphSampler(spec, n, grid, q).sample(stream)


# ---------------------------------------------------------------------------
# Finite-n covariance oracle
# ---------------------------------------------------------------------------

_REF_NODES, _REF_WEIGHTS = legendre.leggauss(32)
_REF_LAGRANGE = legendre.legvander(_REF_NODES, GL_ORDER - 1) @ LEGENDRE_FROM_NODES


@lru_cache(maxsize=4096)
def _laplace_panel_weights(width: float, n: float):
    """
    Weights on one panel of the given width for the smoothing U(x) = int_0^x e^{-2n(x-y)} g(y) dy.

    With g and f interpolated at the panel nodes and a the panel's left edge:
      decay:  e^{-2n width}
      entry:  E_i    = int f-basis_i(x) e^{-2n(x-a)} dx
      exit:   tau_j  = int e^{-2n(b-y)} basis_j(y) dy
      local:  W_ij   = int basis_i(x) int_a^x e^{-2n(x-y)} basis_j(y) dy dx
    """
    beta = n * width
    half = 0.5 * width
    z, wz, lag = _REF_NODES, _REF_WEIGHTS, _REF_LAGRANGE
    entry = half * (wz * np.exp(-beta * (z + 1.0))) @ lag
    exit_ = half * (wz * np.exp(-beta * (1.0 - z))) @ lag
    # inner integral over [-1, u] for every outer node u
    scale = 0.5 * (z + 1.0)
    v = -1.0 + np.outer(scale, z + 1.0)
    inner_w = scale[:, None] * wz[None, :] * np.exp(-beta * (z[:, None] - v))
    basis_v = (legendre.legvander(v.ravel(), GL_ORDER - 1) @ LEGENDRE_FROM_NODES).reshape(z.size, z.size, GL_ORDER)
    H = np.einsum("kl,klj->kj", inner_w, basis_v)
    local = half**2 * np.einsum("k,ki,kj->ij", wz, lag, H)
    return math.exp(-2.0 * beta), entry, exit_, local


def _width_key(width: float) -> float:
    return float(f"{width:.12g}")


def _smoothed_pairing(values: np.ndarray, layout: PanelLayout, n: float) -> np.ndarray:
    """
    J[u, v] = int G(x, t_u) U_v(x)' dx with U_v(x) = int_0^x e^{-2n(x-y)} G(y, t_v) dy.

    values holds node values of shape (P, GL_ORDER, m, d, d).
    """
    keys = [_width_key(w) for w in layout.widths]
    P = layout.count
    m, d = values.shape[2], values.shape[3]
    starts = np.zeros((P, m, d, d))
    entry = np.empty((P, GL_ORDER))
    local = np.empty((P, GL_ORDER, GL_ORDER))
    state = np.zeros((m, d, d))

    run_start = 0
    while run_start < P:
        run_end = run_start
        while run_end + 1 < P and keys[run_end + 1] == keys[run_start]:
            run_end += 1
        rho, E, tau, W = _laplace_panel_weights(keys[run_start], n)
        sl = slice(run_start, run_end + 1)
        entry[sl] = E
        local[sl] = W
        pushed = np.einsum("j,pjvcb->pvcb", tau, values[sl])
        exits = scipy.signal.lfilter([1.0], [1.0, -rho], pushed, axis=0, zi=(rho * state)[None])[0]
        starts[run_start] = state
        starts[run_start + 1:run_end + 1] = exits[:-1]
        state = exits[-1]
        run_start = run_end + 1

    decayed = np.einsum("pi,piuab,pvcb->uvac", entry, values, starts, optimize=True)
    mixed = np.einsum("pij,pjvcb->pivcb", local, values, optimize=True)
    return decayed + np.einsum("piuab,pivcb->uvac", values, mixed, optimize=True)


def finite_n_covariance_grid(spec: OfbmSpec, n: float, times, q: QuadratureConfig) -> np.ndarray:
    """E[X_n(t_i) X_n(t_j)'] for all pairs, with the frequency axis truncated at q.x_max."""
    if not (n > 0):
        raise DomainError(f"telegraph intensity must be positive, got {n}")
    require_exponent(spec.D)
    times = np.asarray(times, dtype=float)
    m, d = times.size, spec.d
    out = np.zeros((m, m, d, d))
    active = np.flatnonzero(times != 0)
    if active.size == 0:
        return out
    t_active = times[active]

    base = panel_layout(q, float(np.max(np.abs(t_active)))).subdivided(MAX_PANEL_DECAY / n)

    def rule(layout: PanelLayout) -> np.ndarray:
        x = layout.nodes.ravel()
        total = 0.0
        for kernel in Kernel:
            values = kernel_grid(kernel, spec, x, t_active).reshape(layout.count, GL_ORDER, t_active.size, d, d)
            J = _smoothed_pairing(values, layout, n)
            total = total + n * (J + np.swapaxes(np.swapaxes(J, 0, 1), 2, 3))
        return total

    result = integrate_rule(rule, base, 10 * q.rel_tol, q.max_refinements)
    logger.debug(
        f"finite-n covariance n={n:g}: {result.layout.count} panels, error {result.error:.2e}")
    out[np.ix_(active, active)] = result.value
    return out


def finite_n_covariance(spec: OfbmSpec, n: float, t: float, s: float, q: QuadratureConfig) -> np.ndarray:
    if t == s:
        return finite_n_covariance_grid(spec, n, [t], q)[0, 0]
    return finite_n_covariance_grid(spec, n, [t, s], q)[0, 1]
