"""
OFBM parameterization, spectral kernels and analytic covariances.

The process is represented through the real spectral form

    X(t) = int_0^inf G1(x, t) dW1(x) + int_0^inf G2(x, t) dW2(x)

with multiplicative constant fixed to 1, where

    G1(x, t) = sin(tx)/x * x^{-(D - I/2)} A1 + (cos(tx) - 1)/x * x^{-(D - I/2)} A2
    G2(x, t) = sin(tx)/x * x^{-(D - I/2)} A2 + (1 - cos(tx))/x * x^{-(D - I/2)} A1
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from .errors import DomainError, InvalidInputError, NotPositiveSemidefiniteError, NumericalFailure
from .linalg import (
    SpectralBounds,
    as_operator,
    cholesky_psd,
    identity,
    mat_power,
    mat_power_batch,
    operator_norm,
    spectral_real_bounds,
)
from .quadrature import (
    PanelLayout,
    QuadratureConfig,
    integrate,
    integrate_rule,
    panel_layout,
    uniform_layout,
)

# Oscillatory tail terms are corrected only when |omega| * x_max exceeds this.
MIN_TAIL_PHASE = 20.0


class Kernel(Enum):
    G1 = "G1"
    G2 = "G2"


@dataclass(frozen=True, eq=False)
class OfbmSpec:
    """Exponent D and spectral amplitudes A = A1 + i A2 of an OFBM."""

    D: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    label: str = ""

    def __post_init__(self):
        D = as_operator(self.D, "D")
        A1 = as_operator(self.A1, "A1")
        A2 = as_operator(self.A2, "A2")
        if not (D.shape == A1.shape == A2.shape):
            raise InvalidInputError(
                f"D, A1, A2 must share a dimension, got {D.shape}, {A1.shape}, {A2.shape}")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @classmethod
    def mason_xiao(cls, D, label: str = "mason-xiao") -> "OfbmSpec":
        """A1 = I, A2 = 0: same law as the Mason-Xiao process with exponent D."""
        D = as_operator(D, "D")
        return cls(D, identity(D.shape[0]), np.zeros_like(D), label)

    @classmethod
    def diagonal(cls, hurst, label: str = "") -> "OfbmSpec":
        return cls.mason_xiao(np.diag(np.asarray(hurst, dtype=float)), label)


def require_exponent(D) -> SpectralBounds:
    """Spectral bounds of D, raising DomainError unless 0 < lambda_D <= Lambda_D < 1."""
    bounds = spectral_real_bounds(D)
    if not (0 < bounds.lambda_min and bounds.lambda_max < 1):
        raise DomainError(
            f"exponent eigenvalue real parts must lie in (0, 1), got "
            f"[{bounds.lambda_min:.6g}, {bounds.lambda_max:.6g}]")
    return bounds


def scaled_amplitudes(spec: OfbmSpec, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """x^{-(D - I/2)} A1 and x^{-(D - I/2)} A2 at every abscissa, shape (K, d, d)."""
    shift = -(spec.D - 0.5 * np.eye(spec.d))
    P = mat_power_batch(x, shift)
    return P @ spec.A1, P @ spec.A2


def _trig_factors(x: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """sin(tx)/x and (cos(tx) - 1)/x, shape (K, m)."""
    tx = np.multiply.outer(x, times)
    a = np.sin(tx) / x[:, None]
    b = -2.0 * np.sin(0.5 * tx) ** 2 / x[:, None]
    return a, b


def kernel_values(spec: OfbmSpec, x: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """G1 and G2 at every (abscissa, time) pair, each of shape (K, m, d, d)."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    Pa1, Pa2 = scaled_amplitudes(spec, x)
    a, b = _trig_factors(x, times)
    a = a[:, :, None, None]
    b = b[:, :, None, None]
    Pa1 = Pa1[:, None]
    Pa2 = Pa2[:, None]
    g1 = a * Pa1 + b * Pa2
    g2 = a * Pa2 - b * Pa1
    return g1, g2


def kernel_grid(kernel: Kernel, spec: OfbmSpec, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    """One kernel at every (abscissa, time) pair, shape (K, m, d, d)."""
    Pa1, Pa2 = scaled_amplitudes(spec, np.asarray(x, dtype=float))
    a, b = _trig_factors(np.asarray(x, dtype=float), np.asarray(times, dtype=float))
    a = a[:, :, None, None]
    b = b[:, :, None, None]
    if kernel is Kernel.G1:
        return a * Pa1[:, None] + b * Pa2[:, None]
    return a * Pa2[:, None] - b * Pa1[:, None]


def _single_kernel(kernel: Kernel, x: float, t: float, spec: OfbmSpec) -> np.ndarray:
    if not (x > 0) or not math.isfinite(x):
        raise DomainError(f"kernel abscissa must be positive, got {x}")
    g1, g2 = kernel_values(spec, np.array([x]), np.array([t]))
    out = (g1 if kernel is Kernel.G1 else g2)[0, 0]
    return out


def kernel_g1(x: float, t: float, spec: OfbmSpec) -> np.ndarray:
    return _single_kernel(Kernel.G1, x, t, spec)


def kernel_g2(x: float, t: float, spec: OfbmSpec) -> np.ndarray:
    return _single_kernel(Kernel.G2, x, t, spec)


# ---------------------------------------------------------------------------
# Spectral covariance
# ---------------------------------------------------------------------------

def _amplitude_products(A1: np.ndarray, A2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """M1 = A1 A1' + A2 A2' (even part) and M2 = A1 A2' - A2 A1' (odd part)."""
    return A1 @ A1.T + A2 @ A2.T, A1 @ A2.T - A2 @ A1.T


def _near_zero_block(D: np.ndarray, M1: np.ndarray, eps: float) -> np.ndarray:
    """int_0^eps x x^{-D} M1 x^{-D'} dx, the leading-order integrand on the first panel."""
    d = D.shape[0]
    shifted = np.eye(d) - D
    Y = scipy.linalg.solve_continuous_lyapunov(shifted, M1)
    P = mat_power(eps, -D)
    return eps**2 * (P @ Y @ P.T)


def _tail_blocks(D: np.ndarray, M1: np.ndarray, M2: np.ndarray, times: np.ndarray,
                 x_max: float) -> np.ndarray:
    """
    Analytic estimate of int_{x_max}^inf of the covariance integrand for every
    time pair. Non-oscillating parts are exact (Lyapunov equation); oscillating
    parts use one integration by parts.
    """
    m = times.size
    d = D.shape[0]
    P = mat_power(x_max, -D)
    # int_X^inf x^{-1} x^{-D} M x^{-D'} dx = X^{-D} Y X^{-D'}, D Y + Y D' = M
    base1 = P @ scipy.linalg.solve_continuous_lyapunov(D, M1) @ P.T
    edge1 = P @ M1 @ P.T / x_max
    edge2 = P @ M2 @ P.T / x_max
    out = np.zeros((m, m, d, d))
    skipped = 0
    for i, t in enumerate(times):
        for j, s in enumerate(times):
            if t == 0 or s == 0:
                continue
            block = np.zeros((d, d))
            for coef, omega in ((1.0, 0.0), (1.0, t - s), (-1.0, t), (-1.0, s)):
                if omega == 0:
                    block += coef * base1
                elif abs(omega) * x_max >= MIN_TAIL_PHASE:
                    block -= coef * edge1 * math.sin(omega * x_max) / omega
                else:
                    skipped += 1
            if np.any(M2):
                for coef, omega in ((1.0, t - s), (-1.0, t), (1.0, s)):
                    if omega != 0 and abs(omega) * x_max >= MIN_TAIL_PHASE:
                        block += coef * edge2 * math.cos(omega * x_max) / omega
            out[i, j] = block
    if skipped:
        logger.debug(f"skipped {skipped} low-frequency oscillatory tail terms")
    return out


def _covariance_grid(D: np.ndarray, A1: np.ndarray, A2: np.ndarray, times,
                     q: QuadratureConfig) -> Tuple[np.ndarray, float]:
    """Spectral covariance blocks for every pair of times plus the refinement error."""
    times = np.asarray(times, dtype=float)
    require_exponent(D)
    d = D.shape[0]
    m = times.size
    out = np.zeros((m, m, d, d))
    if m == 0 or not np.any(times):
        return out, 0.0

    spec = OfbmSpec(D, A1, A2)
    layout = panel_layout(q, float(np.max(np.abs(times))))
    eps = float(layout.edges[1])
    body = PanelLayout(layout.edges[1:])

    def rule(lay: PanelLayout) -> np.ndarray:
        x = lay.nodes.ravel()
        w = lay.weights.ravel()
        g1, g2 = kernel_values(spec, x, times)
        return (np.einsum("k,kiab,kjcb->ijac", w, g1, g1, optimize=True)
                + np.einsum("k,kiab,kjcb->ijac", w, g2, g2, optimize=True))

    result = integrate_rule(rule, body, q.rel_tol, q.max_refinements)
    M1, M2 = _amplitude_products(spec.A1, spec.A2)
    out = result.value + np.multiply.outer(np.outer(times, times), _near_zero_block(D, M1, eps))
    if q.tail_correction:
        out = out + _tail_blocks(D, M1, M2, times, q.x_max)

    zero = times == 0
    out[zero] = 0.0
    out[:, zero] = 0.0
    # R(s, t) = R(t, s)' exactly
    for i in range(m):
        out[i, i] = 0.5 * (out[i, i] + out[i, i].T)
        for j in range(i + 1, m):
            out[j, i] = out[i, j].T
    logger.debug(f"spectral covariance on {m} times: {result.layout.count} panels, error {result.error:.2e}")
    return out, result.error


def spectral_covariance_grid(times, spec: OfbmSpec, q: QuadratureConfig) -> np.ndarray:
    """Blocks R(t_i, t_j) for all pairs, shape (m, m, d, d)."""
    return _covariance_grid(spec.D, spec.A1, spec.A2, times, q)[0]


def spectral_covariance(t: float, s: float, spec: OfbmSpec, q: QuadratureConfig) -> np.ndarray:
    if t == s:
        return spectral_covariance_grid([t], spec, q)[0, 0]
    lo, hi = (t, s) if t < s else (s, t)
    block = spectral_covariance_grid([lo, hi], spec, q)[0, 1]
    return block if t == lo else block.T


def gamma_mason_xiao(D, q: QuadratureConfig) -> np.ndarray:
    """E[Y(1) Y(1)'] for the Mason-Xiao process with exponent D."""
    D = as_operator(D, "D")
    d = D.shape[0]
    values, error = _covariance_grid(D, np.eye(d), np.zeros((d, d)), [1.0], q)
    gamma = values[0, 0]
    logger.debug(f"Gamma for D={D.tolist()}: {gamma.tolist()} (error {error:.2e})")
    return gamma


# ---------------------------------------------------------------------------
# Closed reversible form
# ---------------------------------------------------------------------------

def _scaled_gamma(u: float, D: np.ndarray, Gamma: np.ndarray) -> np.ndarray:
    """|u|^D Gamma |u|^{D'}; zero at u = 0."""
    if u == 0:
        return np.zeros_like(Gamma)
    P = mat_power(abs(u), D)
    block = P @ Gamma @ P.T
    return 0.5 * (block + block.T)


def reversible_covariance(t: float, s: float, D, Gamma) -> np.ndarray:
    D = as_operator(D, "D")
    Gamma = as_operator(Gamma, "Gamma")
    if D.shape != Gamma.shape:
        raise InvalidInputError("D and Gamma must share a dimension")
    return 0.5 * (_scaled_gamma(t, D, Gamma) + _scaled_gamma(s, D, Gamma) - _scaled_gamma(t - s, D, Gamma))


def reversible_covariance_grid(times, D, Gamma) -> np.ndarray:
    D = as_operator(D, "D")
    Gamma = as_operator(Gamma, "Gamma")
    times = np.asarray(times, dtype=float)
    m, d = times.size, D.shape[0]
    single = [_scaled_gamma(t, D, Gamma) for t in times]
    out = np.zeros((m, m, d, d))
    for i in range(m):
        for j in range(i, m):
            block = 0.5 * (single[i] + single[j] - _scaled_gamma(times[i] - times[j], D, Gamma))
            out[i, j] = block
            out[j, i] = block.T
    return out


def is_time_reversible_params(spec: OfbmSpec, tol: float = 1e-10) -> bool:
    """A2 A1' = A1 A2' within tol in operator norm."""
    return operator_norm(spec.A2 @ spec.A1.T - spec.A1 @ spec.A2.T) <= tol


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    label: str
    checks: List[ValidationCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "pass": self.passed,
            "checks": [{"name": c.name, "pass": c.passed, "detail": c.detail} for c in self.checks],
        }


def validate_spec(spec: OfbmSpec, q: Optional[QuadratureConfig] = None) -> ValidationReport:
    """Finiteness, exponent bounds and properness of the model, one check each."""
    q = q or QuadratureConfig()
    report = ValidationReport(spec.label)

    finite = all(np.all(np.isfinite(M)) for M in (spec.D, spec.A1, spec.A2))
    report.checks.append(ValidationCheck("finiteness", finite, "all entries finite" if finite else "non-finite entries"))

    bounds = spectral_real_bounds(spec.D)
    in_range = 0 < bounds.lambda_min and bounds.lambda_max < 1
    report.checks.append(ValidationCheck(
        "eigenvalue_bounds", in_range,
        f"lambda_D={bounds.lambda_min:.6g}, Lambda_D={bounds.lambda_max:.6g}"
        + ("" if in_range else "; need 0 < lambda_D <= Lambda_D < 1")))

    if not in_range:
        report.checks.append(ValidationCheck("properness", False, "skipped: exponent out of range"))
        return report

    try:
        gamma = spectral_covariance(1.0, 1.0, spec, q)
    except NumericalFailure as e:
        report.checks.append(ValidationCheck("properness", False, f"covariance quadrature failed: {e}"))
        return report
    threshold = 1e-10 * float(np.trace(gamma)) / spec.d
    try:
        factor = cholesky_psd(gamma, jitter_max=0.0).factor
        pivot = float(np.min(np.diagonal(factor)) ** 2)
        proper = threshold > 0 and pivot > threshold
        detail = f"smallest Cholesky pivot {pivot:.3e}, threshold {threshold:.3e}"
    except NotPositiveSemidefiniteError:
        proper = False
        detail = "R(1,1) is not positive definite"
    report.checks.append(ValidationCheck("properness", proper, detail))
    return report


def require_valid(spec: OfbmSpec, q: Optional[QuadratureConfig] = None) -> ValidationReport:
    from .errors import InvalidModelError

    report = validate_spec(spec, q)
    if not report.passed:
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        raise InvalidModelError(f"model {spec.label or '<unnamed>'} failed validation: {failed}", report)
    return report


# ---------------------------------------------------------------------------
# Square integrability of the kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SquareIntegrabilityReport:
    l2_norm_sq: float
    refinement_error: float
    tail: float
    tail_doubled: float
    decay_ratio: float
    required_ratio: float

    @property
    def passed(self) -> bool:
        return self.decay_ratio >= self.required_ratio


def kernel_square_integrability(spec: OfbmSpec, t: float, q: QuadratureConfig,
                                slack: float = 0.1) -> SquareIntegrabilityReport:
    """
    Refined estimate of int_0^x_max (|G1|^2 + |G2|^2) dx (Frobenius norms) and the
    decay of its tail mass over [X, 2X] when X doubles.
    """
    bounds = require_exponent(spec.D)
    times = np.array([t], dtype=float)

    def integrand(x: np.ndarray) -> np.ndarray:
        g1, g2 = kernel_values(spec, x, times)
        return np.sum(g1[:, 0] ** 2, axis=(1, 2)) + np.sum(g2[:, 0] ** 2, axis=(1, 2))

    body = integrate(integrand, panel_layout(q, abs(t)), q.rel_tol, q.max_refinements)
    width = math.pi / max(abs(t), 1.0)
    tail = integrate(integrand, uniform_layout(q.x_max, 2 * q.x_max, width), 1e-6, q.max_refinements)
    tail2 = integrate(integrand, uniform_layout(2 * q.x_max, 4 * q.x_max, width), 1e-6, q.max_refinements)
    ratio = float(tail.value / tail2.value) if tail2.value > 0 else math.inf
    return SquareIntegrabilityReport(
        l2_norm_sq=float(body.value),
        refinement_error=body.error,
        tail=float(tail.value),
        tail_doubled=float(tail2.value),
        decay_ratio=ratio,
        required_ratio=2.0 ** (2 * bounds.lambda_min - slack),
    )


# ---------------------------------------------------------------------------
# Covariance functions used as diagnostic targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovMatrixFn:
    """Covariance rule (t, s) -> d x d matrix, evaluated a whole grid at a time."""

    on_grid: Callable[[np.ndarray], np.ndarray]
    source: str = "analytic"
    description: str = ""

    def evaluate(self, t: float, s: float) -> np.ndarray:
        return self.on_grid(np.array([t, s], dtype=float))[0, 1]

    def __call__(self, t: float, s: float) -> np.ndarray:
        return self.evaluate(t, s)

    @classmethod
    def reversible(cls, D, Gamma) -> "CovMatrixFn":
        return cls(lambda g: reversible_covariance_grid(g, D, Gamma), "analytic", "reversible closed form")

    @classmethod
    def spectral(cls, spec: OfbmSpec, q: QuadratureConfig) -> "CovMatrixFn":
        return cls(lambda g: spectral_covariance_grid(g, spec, q), "analytic", "spectral integral")

    @classmethod
    def fbm(cls, hurst, scales=None) -> "CovMatrixFn":
        hurst = np.asarray(hurst, dtype=float)
        scales = np.ones_like(hurst) if scales is None else np.asarray(scales, dtype=float)
        return cls(lambda g: fbm_covariance_grid(g, hurst, scales), "analytic", "component fBm covariance")

    @classmethod
    def finite_n(cls, spec: OfbmSpec, n: float, q: QuadratureConfig) -> "CovMatrixFn":
        from .telegraph import finite_n_covariance_grid

        return cls(lambda g: finite_n_covariance_grid(spec, n, g, q), "analytic", f"telegraph oracle n={n:g}")

    @classmethod
    def partial_sum(cls, cov, cfg) -> "CovMatrixFn":
        from .partial_sums import partial_sum_covariance

        return cls(lambda g: partial_sum_covariance(cov, cfg, g), "analytic", f"partial-sum oracle N={cfg.N}")


def fbm_covariance_grid(times, hurst, scales) -> np.ndarray:
    """Diagonal blocks scale_k^2 (t^{2H_k} + s^{2H_k} - |t-s|^{2H_k}) / 2."""
    times = np.abs(np.asarray(times, dtype=float))
    hurst = np.asarray(hurst, dtype=float)
    scales = np.asarray(scales, dtype=float)
    two_h = 2.0 * hurst
    t = times[:, None, None]
    s = times[None, :, None]
    values = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h) * scales**2
    m, d = times.size, hurst.size
    out = np.zeros((m, m, d, d))
    idx = np.arange(d)
    out[:, :, idx, idx] = values
    return out
