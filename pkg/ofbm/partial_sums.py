"""
Normalized partial sums of stationary Gaussian vector sequences.

    Q_N(t) = d_N * sum_{i <= floor(N t)} Z_i

Diagonal fractional Gaussian noise is generated by circulant embedding, explicit
lag tables by a dense block-Toeplitz Cholesky factor.
"""

import math
from dataclasses import dataclass
from threading import Lock
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger

from .errors import DomainError, InvalidInputError, NotPositiveSemidefiniteError
from .linalg import as_operator, cholesky_psd, mat_power
from .paths import GridPath, check_grid
from .rng import Role, RngStream
from .workers import map_replicates

MAX_FGN_LENGTH = 2**22
MAX_EXPLICIT_SIZE = 2**14
EMBEDDING_TOLERANCE = 1e-8
FLOOR_SLACK = 1e-9


def _check_hurst(H: float) -> float:
    H = float(H)
    if not (0 < H < 1):
        raise DomainError(f"Hurst index must lie in (0, 1), got {H}")
    return H


def fgn_covariance(H: float, j) -> np.ndarray:
    """gamma_H(j) = (|j+1|^{2H} - 2|j|^{2H} + |j-1|^{2H}) / 2 for integer lags j >= 0."""
    H = _check_hurst(H)
    j = np.abs(np.asarray(j, dtype=float))
    two_h = 2.0 * H
    out = np.empty_like(j)
    small = j < 2
    js = j[small]
    out[small] = 0.5 * ((js + 1) ** two_h - 2 * js**two_h + np.abs(js - 1) ** two_h)
    jl = j[~small]
    # second difference written through expm1/log1p to avoid cancellation at large lags
    out[~small] = 0.5 * jl**two_h * (np.expm1(two_h * np.log1p(1.0 / jl)) + np.expm1(two_h * np.log1p(-1.0 / jl)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Covariance sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StationaryCovSeq:
    """
    Lag covariances r(j) = E[Z_i Z_{i+j}'] of a stationary d-variate sequence.

    kind "fgn-diagonal": component k is scale_k times fGn with index hurst_k.
    kind "explicit": r(0..L) given as a table; r(j) = 0 beyond L.
    """

    kind: str
    hurst: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "fgn-diagonal":
            hurst = np.array(self.hurst, dtype=float).reshape(-1)
            if hurst.size == 0:
                raise InvalidInputError("hurst vector is empty")
            for H in hurst:
                _check_hurst(H)
            scales = np.ones_like(hurst) if self.scales is None else np.array(self.scales, dtype=float).reshape(-1)
            if scales.shape != hurst.shape or np.any(scales <= 0) or not np.all(np.isfinite(scales)):
                raise InvalidInputError("scales must be positive and match the hurst vector")
            object.__setattr__(self, "hurst", hurst)
            object.__setattr__(self, "scales", scales)
        elif self.kind == "explicit":
            table = np.array(self.table, dtype=float)
            if table.ndim == 1:
                table = table[:, None, None]
            if table.ndim != 3 or table.shape[1] != table.shape[2] or table.shape[0] < 1:
                raise InvalidInputError(f"covariance table must have shape (L+1, d, d), got {table.shape}")
            if not np.all(np.isfinite(table)):
                raise InvalidInputError("covariance table has non-finite entries")
            if np.max(np.abs(table[0] - table[0].T)) > 1e-12 * max(1.0, np.max(np.abs(table[0]))):
                raise InvalidInputError("r(0) must be symmetric")
            object.__setattr__(self, "table", table)
        else:
            raise InvalidInputError(f"unknown covariance kind {self.kind!r}")

    @classmethod
    def fgn(cls, hurst, scales=None) -> "StationaryCovSeq":
        return cls("fgn-diagonal", hurst=hurst, scales=scales)

    @classmethod
    def from_table(cls, table) -> "StationaryCovSeq":
        """Explicit table r(0..L); rejects tables whose block-Toeplitz matrix is not PSD."""
        cov = cls("explicit", table=table)
        cholesky_psd(block_toeplitz(cov, cov.table.shape[0]), jitter_max=1e-8)
        return cov

    @property
    def d(self) -> int:
        return self.hurst.size if self.kind == "fgn-diagonal" else self.table.shape[1]

    @property
    def horizon(self) -> float:
        """Largest lag with a stored value (infinite for fGn)."""
        return math.inf if self.kind == "fgn-diagonal" else self.table.shape[0] - 1

    def lags(self, count: int) -> np.ndarray:
        """r(0), ..., r(count - 1), shape (count, d, d)."""
        out = np.zeros((count, self.d, self.d))
        if self.kind == "fgn-diagonal":
            j = np.arange(count)
            idx = np.arange(self.d)
            out[:, idx, idx] = np.stack(
                [fgn_covariance(H, j) * s**2 for H, s in zip(self.hurst, self.scales)], axis=1)
        else:
            upto = min(count, self.table.shape[0])
            out[:upto] = self.table[:upto]
        return out

    def lag(self, j: int) -> np.ndarray:
        if j < 0:
            raise InvalidInputError(f"lag must be non-negative, got {j}")
        return self.lags(j + 1)[j]


def block_toeplitz(cov: StationaryCovSeq, length: int) -> np.ndarray:
    """Covariance of (Z_1, ..., Z_length) stacked, shape (length*d, length*d)."""
    d = cov.d
    r = cov.lags(length)
    blocks = np.empty((length, length, d, d))
    for i in range(length):
        for j in range(length):
            blocks[i, j] = r[j - i] if j >= i else r[i - j].T
    return blocks.transpose(0, 2, 1, 3).reshape(length * d, length * d)


@dataclass(frozen=True, eq=False)
class PartialSumConfig:
    N: int
    D: np.ndarray
    normalization: Union[str, np.ndarray] = "auto-fgn"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidInputError(f"N must be an integer >= 2, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "D", as_operator(self.D, "D"))
        if isinstance(self.normalization, str):
            if self.normalization != "auto-fgn":
                raise InvalidInputError(f"unknown normalization {self.normalization!r}")
        else:
            d_n = as_operator(self.normalization, "normalization")
            if d_n.shape != self.D.shape:
                raise InvalidInputError("normalization matrix must match D")
            if abs(np.linalg.det(d_n)) < 1e-300 or np.linalg.cond(d_n) > 1e14:
                raise InvalidInputError("normalization matrix must be nonsingular")
            object.__setattr__(self, "normalization", d_n)

    @classmethod
    def for_fgn(cls, N: int, hurst) -> "PartialSumConfig":
        return cls(N, np.diag(np.asarray(hurst, dtype=float)))

    def normalizer(self) -> np.ndarray:
        """d_N: N^{-D} for auto-fgn, else the explicit matrix."""
        if isinstance(self.normalization, str):
            return mat_power(float(self.N), -self.D)
        return self.normalization


def step_counts(N: int, times) -> np.ndarray:
    """floor(N t) for each t, absorbing binary representation error of decimal times."""
    return np.floor(N * np.asarray(times, dtype=float) + FLOOR_SLACK).astype(np.int64)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

class _EmbeddingCache:
    """Circulant eigenvalues per (H, length); None marks an embedding that is not PSD."""

    def __init__(self):
        self._values: Dict[Tuple[float, int], Optional[np.ndarray]] = {}
        self._lock = Lock()

    def get(self, H: float, length: int) -> Optional[np.ndarray]:
        key = (H, length)
        with self._lock:
            if key in self._values:
                return self._values[key]
        gamma = fgn_covariance(H, np.arange(length + 1))
        row = np.concatenate([gamma, gamma[-2:0:-1]])
        eig = np.fft.fft(row).real
        if eig.min() < -EMBEDDING_TOLERANCE * eig.max():
            logger.warning(
                f"circulant embedding for H={H}, length={length} has negative eigenvalue "
                f"{eig.min():.3e}; falling back to Toeplitz Cholesky")
            eig = None
        else:
            eig = np.clip(eig, 0.0, None)
        with self._lock:
            self._values[key] = eig
        return eig


_EMBEDDINGS = _EmbeddingCache()


def _toeplitz_fgn(H: float, length: int, rng: np.random.Generator) -> np.ndarray:
    if length > MAX_EXPLICIT_SIZE:
        raise NotPositiveSemidefiniteError(
            f"circulant embedding failed and length {length} is too large for Toeplitz Cholesky")
    factor = cholesky_psd(scipy.linalg.toeplitz(fgn_covariance(H, np.arange(length)))).factor
    return factor @ rng.standard_normal(length)


def _fgn_from_generator(H: float, length: int, rng: np.random.Generator) -> np.ndarray:
    eig = _EMBEDDINGS.get(H, length)
    if eig is None:
        return _toeplitz_fgn(H, length, rng)
    size = eig.size
    noise = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return np.fft.fft(np.sqrt(eig / size) * noise).real[:length]


def sample_fgn(H: float, length: int, stream: RngStream) -> np.ndarray:
    """Unit-variance fGn of the given length by circulant embedding (Davies-Harte)."""
    H = _check_hurst(H)
    if int(length) != length or not (1 <= length <= MAX_FGN_LENGTH):
        raise InvalidInputError(f"fGn length must lie in [1, {MAX_FGN_LENGTH}], got {length}")
    return _fgn_from_generator(H, int(length), stream.generator())


def sample_stationary_explicit(cov: StationaryCovSeq, length: int, stream: RngStream) -> np.ndarray:
    """Rows Z_1..Z_length, shape (length, d), from the dense block-Toeplitz factor."""
    if length < 1 or length * cov.d > MAX_EXPLICIT_SIZE:
        raise InvalidInputError(f"explicit sampling needs 1 <= length*d <= {MAX_EXPLICIT_SIZE}")
    factor = cholesky_psd(block_toeplitz(cov, length)).factor
    z = stream.generator().standard_normal(length * cov.d)
    return (factor @ z).reshape(length, cov.d)


def sample_stationary(cov: StationaryCovSeq, length: int, stream: RngStream) -> np.ndarray:
    """Shape (length, d); fGn components use independent child streams."""
    if cov.kind == "fgn-diagonal":
        columns = [
            s * sample_fgn(H, length, stream.child(k, Role.NOISE))
            for k, (H, s) in enumerate(zip(cov.hurst, cov.scales))
        ]
        return np.stack(columns, axis=1)
    return sample_stationary_explicit(cov, length, stream)


def partial_sum_path(Z, cfg: PartialSumConfig, grid, replicate_id: int = 0, seed: int = 0) -> GridPath:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    grid = check_grid(grid)
    if grid[-1] > 1 + 1e-12:
        raise InvalidInputError("partial-sum grid must lie in [0, 1]")
    if Z.shape[0] < cfg.N:
        raise InvalidInputError(f"need at least N={cfg.N} innovations, got {Z.shape[0]}")
    if Z.shape[1] != cfg.D.shape[0]:
        raise InvalidInputError(f"innovations have dimension {Z.shape[1]}, D has {cfg.D.shape[0]}")
    prefix = np.concatenate([np.zeros((1, Z.shape[1])), np.cumsum(Z[: cfg.N], axis=0)])
    counts = step_counts(cfg.N, grid)
    values = prefix[counts] @ cfg.normalizer().T
    values[counts == 0] = 0.0
    return GridPath(grid, values, replicate_id, seed)


class PartialSumSampler:
    """Q_N paths for one covariance sequence, configuration and grid."""

    def __init__(self, cov: StationaryCovSeq, cfg: PartialSumConfig, grid):
        if cov.d != cfg.D.shape[0]:
            raise InvalidInputError("covariance and normalization dimensions differ")
        self.cov = cov
        self.cfg = cfg
        self.grid = check_grid(grid)

    def sample(self, stream: RngStream, replicate_id: int = 0) -> GridPath:
        Z = sample_stationary(self.cov, self.cfg.N, stream)
        return partial_sum_path(Z, self.cfg, self.grid, replicate_id, stream.seed)

    def sample_many(self, stream: RngStream, count: int, threads: int = 1) -> List[GridPath]:
        return map_replicates(lambda i: self.sample(stream.child(i), i), count, threads)


# ---------------------------------------------------------------------------
# Exact second moments
# ---------------------------------------------------------------------------

def partial_sum_covariance(cov: StationaryCovSeq, cfg: PartialSumConfig, times) -> np.ndarray:
    """E[Q_N(t_i) Q_N(t_j)'] for all pairs, shape (m, m, d, d)."""
    times = np.asarray(times, dtype=float)
    counts = step_counts(cfg.N, times)
    top = int(counts.max()) if counts.size else 0
    r = cov.lags(max(top, 1))
    d_n = cfg.normalizer()
    m, d = times.size, cov.d
    out = np.zeros((m, m, d, d))
    lags = np.arange(top)
    for i, a in enumerate(counts):
        for j, b in enumerate(counts):
            if a == 0 or b == 0:
                continue
            # sum_{p<=a, q<=b} E[Z_p Z_q'] split by the lag q - p
            forward = np.clip(np.minimum(a, b - lags), 0, None)
            backward = np.clip(np.minimum(b, a - lags[1:]), 0, None)
            block = np.tensordot(forward[:b], r[:b], axes=(0, 0))
            if a > 1:
                block = block + np.tensordot(backward[: a - 1], np.swapaxes(r[1:a], 1, 2), axes=(0, 0))
            out[i, j] = d_n @ block @ d_n.T
    return out


def en_asymptotics(cov: StationaryCovSeq, N: int) -> np.ndarray:
    """E_N = sum_{i,j<=N} r(j - i) = N r(0) + sum_{j=1}^{N-1} (N - j)(r(j) + r(j)')."""
    if N < 1:
        raise InvalidInputError(f"N must be positive, got {N}")
    r = cov.lags(N)
    weights = N - np.arange(1, N)
    tail = np.tensordot(weights, r[1:] + np.swapaxes(r[1:], 1, 2), axes=(0, 0)) if N > 1 else 0.0
    return N * r[0] + tail


@dataclass(frozen=True)
class AntipersistentResidual:
    lag_horizon: int
    residual: float
    tail_estimate: float

    @property
    def total(self) -> float:
        return self.residual + self.tail_estimate


def check_antipersistent_sum(cov: StationaryCovSeq, L: int) -> AntipersistentResidual:
    """
    Operator norm of r(0) + sum_{j=1}^{L} (r(j) + r(j)'), which vanishes in the limit
    for antipersistent sequences, with an estimate of the neglected tail.

    Normalised so that an i.i.d. sequence gives r(0): for fGn the sum telescopes to
    ((L+1)^{2H} - L^{2H}) scale^2 with no factor 1/2, which equals scale^2 at H = 1/2.
    """
    if L < 0:
        raise InvalidInputError(f"lag horizon must be non-negative, got {L}")
    if cov.kind == "fgn-diagonal":
        # telescoped closed form ((L+1)^{2H} - L^{2H}) scale^2 per component
        two_h = 2.0 * cov.hurst
        diag = ((L + 1.0) ** two_h - float(L) ** two_h) * cov.scales**2
        residual = float(np.max(np.abs(diag)))
        tails = np.where(cov.hurst < 0.5, two_h * max(L, 1) ** (two_h - 1.0) * cov.scales**2, np.inf)
        tail = float(np.max(tails))
    else:
        if L > cov.horizon:
            raise InvalidInputError(f"table stops at lag {cov.horizon}, asked for {L}")
        r = cov.lags(L + 1)
        total = r[0] + np.sum(r[1:] + np.swapaxes(r[1:], 1, 2), axis=0)
        residual = float(np.linalg.norm(total, ord=2))
        tail = 0.0
    return AntipersistentResidual(L, residual, tail)


# ---------------------------------------------------------------------------
# Diagonal asymptotic constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaqquConstants:
    C0: np.ndarray
    C0_hat: np.ndarray
    C1: np.ndarray
    C: np.ndarray


def taqqu_constants(hurst) -> TaqquConstants:
    """Diagonal constants of the partial-sum normalization for a diagonal exponent."""
    hurst = np.asarray(hurst, dtype=float).reshape(-1)
    for H in hurst:
        _check_hurst(H)
        if H == 0.5:
            raise DomainError("constants are undefined for H = 1/2")
    two = 2.0 * hurst
    C0 = np.diag(1.0 / (two - 1.0))
    return TaqquConstants(
        C0=C0,
        C0_hat=-C0,
        C1=np.diag(1.0 / two),
        C=np.diag(1.0 / np.sqrt(np.abs(two - 1.0) * two)),
    )


def fgn_tail_coefficient(H: float) -> float:
    """Coefficient c in gamma_H(j) ~ c j^{2H-2}."""
    H = _check_hurst(H)
    return H * (2.0 * H - 1.0)


def asymptotic_en(hurst, coefficient, N: int) -> np.ndarray:
    """
    Predicted E_N: 2 c C0 C1 N^{2D} when persistent, -2 c C0_hat C1 N^{2D} when
    antipersistent, componentwise for a diagonal exponent.
    """
    hurst = np.asarray(hurst, dtype=float).reshape(-1)
    coefficient = np.broadcast_to(np.asarray(coefficient, dtype=float), hurst.shape)
    k = taqqu_constants(hurst)
    growth = float(N) ** (2.0 * hurst)
    persistent = hurst > 0.5
    c0 = np.where(persistent, np.diagonal(k.C0), -np.diagonal(k.C0_hat))
    return np.diag(2.0 * coefficient * c0 * np.diagonal(k.C1) * growth)
