"""
Small dense real-matrix calculus.

Operators are plain read-only ``float64`` numpy arrays of shape (d, d).
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from loguru import logger

from .errors import DomainError, InvalidInputError, NotPositiveSemidefiniteError, NumericalFailure

MAX_SPECTRAL_DIM = 16


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min: float
    lambda_max: float


@dataclass(frozen=True)
class CholeskyResult:
    factor: np.ndarray
    jitter: float


def as_operator(M, name: str = "matrix") -> np.ndarray:
    """Validate M as a finite square real matrix and return a read-only copy."""
    arr = np.array(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def identity(d: int) -> np.ndarray:
    eye = np.eye(d)
    eye.setflags(write=False)
    return eye


def mat_exp(M) -> np.ndarray:
    """Matrix exponential (Pade scaling and squaring)."""
    M = as_operator(M)
    if not np.any(M):
        return identity(M.shape[0])
    out = scipy.linalg.expm(M)
    out.setflags(write=False)
    return out


def mat_power(c: float, D) -> np.ndarray:
    """c**D = exp(ln(c) D) for c > 0."""
    if not (c > 0) or not math.isfinite(c):
        raise DomainError(f"matrix power needs a positive finite base, got {c}")
    D = as_operator(D, "D")
    if c == 1.0:
        return identity(D.shape[0])
    return mat_exp(math.log(c) * D)


def mat_power_batch(cs, D) -> np.ndarray:
    """Stack of c**D for every positive c in cs, shape (len(cs), d, d)."""
    cs = np.asarray(cs, dtype=float)
    if np.any(cs <= 0) or not np.all(np.isfinite(cs)):
        raise DomainError("matrix power needs positive finite bases")
    D = as_operator(D, "D")
    logs = np.log(cs)
    if np.count_nonzero(D - np.diag(np.diagonal(D))) == 0:
        out = np.zeros(cs.shape + D.shape)
        idx = np.arange(D.shape[0])
        out[..., idx, idx] = np.exp(logs[..., None] * np.diagonal(D))
        return out
    return scipy.linalg.expm(logs[..., None, None] * D)


def operator_norm(M) -> float:
    """Largest singular value."""
    M = as_operator(M)
    return float(np.linalg.norm(M, ord=2))


def spectral_real_bounds(M) -> SpectralBounds:
    """Min and max real parts of the eigenvalues, read from the real Schur form."""
    M = as_operator(M)
    d = M.shape[0]
    if d > MAX_SPECTRAL_DIM:
        raise InvalidInputError(f"spectral bounds supported up to d={MAX_SPECTRAL_DIM}, got {d}")
    try:
        T, _ = scipy.linalg.schur(M, output="real")
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"Schur iteration did not converge: {e}") from e

    real_parts = []
    k = 0
    while k < d:
        if k + 1 < d and T[k + 1, k] != 0.0:
            # 2x2 block holding a complex pair
            real_parts.append(0.5 * (T[k, k] + T[k + 1, k + 1]))
            k += 2
        else:
            real_parts.append(T[k, k])
            k += 1
    return SpectralBounds(float(min(real_parts)), float(max(real_parts)))


def jitter_ladder(jitter_max: float):
    """0, 1e-12, 1e-10, ... up to jitter_max."""
    yield 0.0
    eps = 1e-12
    while eps <= jitter_max * (1 + 1e-9):
        yield eps
        eps *= 100.0


def cholesky_psd(M, jitter_max: float = 1e-8) -> CholeskyResult:
    """Lower Cholesky factor of M + eps I for the smallest working eps on the ladder."""
    if jitter_max < 0:
        raise InvalidInputError(f"jitter_max must be non-negative, got {jitter_max}")
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInputError(f"Cholesky needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("Cholesky input has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise InvalidInputError("Cholesky input is not symmetric")
    M = 0.5 * (M + M.T)

    eye = np.eye(M.shape[0])
    for eps in jitter_ladder(jitter_max):
        try:
            L = scipy.linalg.cholesky(M + eps * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
        if eps > 0:
            logger.warning(f"Cholesky needed jitter {eps:.0e} on a {M.shape[0]}x{M.shape[0]} matrix")
        return CholeskyResult(L, eps)
    raise NotPositiveSemidefiniteError(
        f"matrix is not positive semidefinite (Cholesky failed up to jitter {jitter_max:.0e})")


def power_norm_ratios(D, radii: Sequence[float], exponent: float) -> np.ndarray:
    """||r**D|| / r**exponent over the sampled radii."""
    D = as_operator(D, "D")
    radii = np.asarray(radii, dtype=float)
    norms = np.linalg.norm(mat_power_batch(radii, D), ord=2, axis=(-2, -1))
    return norms / radii**exponent
