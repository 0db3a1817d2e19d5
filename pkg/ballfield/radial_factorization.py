"""
Radial covariance matrices and their correlating factors.

Two factorizations of the M×M radial covariance matrix are provided:
Cholesky (C = L Lᵀ) and the eigendecomposition used by the Karhunen-Loève
expansion. Eigenvectors are stored as columns, C = V diag(λ) Vᵀ, with
eigenvalues sorted in descending order.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from ballfield.covariance import radial_cov
from ballfield.utils.error_handler import (
    DimensionMismatchError,
    DomainError,
    IndefiniteMatrixError,
    NotPositiveDefiniteError,
)

logger = logging.getLogger(__name__)

CHOLESKY = "cholesky"
KL = "kl"
RADIAL_METHODS = (CHOLESKY, KL)

JITTER_SCALE = 1e-12
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3
EIGEN_NOISE = 1e-12


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing radii r₁ < … < r_M in (0, 1]."""

    radii: np.ndarray

    def __post_init__(self):
        radii = np.array(self.radii, dtype=float).ravel()
        if radii.size < 1:
            raise DomainError("Radial grid needs at least one radius")
        if np.any(~np.isfinite(radii)) or radii[0] <= 0.0 or radii[-1] > 1.0:
            raise DomainError("Radii must lie in (0, 1]")
        if np.any(np.diff(radii) <= 0.0):
            raise DomainError("Radii must be strictly increasing")
        radii.setflags(write=False)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def uniform(cls, count):
        """Radii i/M for i = 1..M."""
        if int(count) != count or count < 1:
            raise DomainError(f"Radius count must be a positive integer, got {count}")
        return cls(np.arange(1, int(count) + 1, dtype=float) / count)

    @property
    def size(self):
        return self.radii.size

    def index_of(self, r, atol=1e-12):
        """Index of a grid radius, or None if r is not on the grid."""
        matches = np.flatnonzero(np.isclose(self.radii, r, rtol=0.0, atol=atol))
        return int(matches[0]) if matches.size else None

    def __eq__(self, other):
        return isinstance(other, RadialGrid) and np.array_equal(self.radii, other.radii)

    def __hash__(self):
        return hash(self.radii.tobytes())


@dataclass(frozen=True, eq=False)
class RadialCovMatrix:
    """Symmetric matrix of C_r(r_i, r_j) over a radial grid."""

    entries: np.ndarray

    @property
    def size(self):
        return self.entries.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.entries))


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower-triangular L with L Lᵀ equal to the (jittered) covariance."""

    L: np.ndarray
    jitter_applied: float = 0.0

    @property
    def size(self):
        return self.L.shape[0]

    @property
    def white_dim(self):
        """Length of the white vector consumed by correlate."""
        return self.L.shape[0]


@dataclass(frozen=True, eq=False)
class KLFactor:
    """Eigenpairs of a radial covariance matrix, possibly truncated.

    Attributes:
        eigenvalues (np.ndarray): λ₁ >= … >= λ_M >= 0.
        eigenvectors (np.ndarray): Orthonormal columns v₁..v_M.
        retained (int): M₁, the number of leading eigenpairs used.
        trace_fraction (float): Σ_{i<=M₁} λᵢ / Σ λᵢ.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    retained: int
    trace_fraction: float

    @property
    def size(self):
        return self.eigenvectors.shape[0]

    @property
    def white_dim(self):
        return self.retained

    def reconstruct(self):
        """Rank-M₁ approximation Σ_{i<=M₁} λᵢ vᵢ vᵢᵀ."""
        v = self.eigenvectors[:, : self.retained]
        return (v * self.eigenvalues[: self.retained]) @ v.T


def build_radial_matrix(grid, model):
    """Radial covariance matrix over all pairs of grid radii.

    Args:
        grid (RadialGrid): Radii r₁..r_M.
        model (RadialCovarianceModel): Radial covariance function.

    Returns:
        RadialCovMatrix: Exactly symmetric M×M matrix.
    """
    r = grid.radii
    entries = radial_cov(model, r[:, None], r[None, :])
    entries = np.atleast_2d(entries)
    # |r_i - r_j| is symmetric already; enforce bitwise symmetry anyway
    entries = np.triu(entries) + np.triu(entries, 1).T
    entries.setflags(write=False)
    return RadialCovMatrix(entries)


def cholesky(cov):
    """Cholesky factor with escalating diagonal jitter on failure.

    The first attempt uses no jitter. Each retry adds
    1e-12·trace/M × 10^(retry-1) to the diagonal, for at most three retries.

    Args:
        cov (RadialCovMatrix): Symmetric covariance matrix.

    Returns:
        CholeskyFactor: Lower-triangular factor and the jitter applied.

    Raises:
        NotPositiveDefiniteError: If every attempt fails.
    """
    c = np.asarray(cov.entries, dtype=float)
    m = c.shape[0]
    base = JITTER_SCALE * cov.trace / m
    jitter = 0.0

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(JITTER_RETRIES + 1),
            retry=retry_if_exception_type(np.linalg.LinAlgError),
            reraise=True,
        ):
            with attempt:
                retry_number = attempt.retry_state.attempt_number - 1
                jitter = 0.0 if retry_number == 0 else base * JITTER_GROWTH ** (retry_number - 1)
                if jitter:
                    logger.debug("Cholesky retry %d with jitter %.3e", retry_number, jitter)
                L = scipy.linalg.cholesky(c + jitter * np.eye(m), lower=True)
                if not np.all(np.diag(L) > 0):
                    raise np.linalg.LinAlgError("non-positive pivot")
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(
            f"Radial covariance matrix is not positive definite after {JITTER_RETRIES} "
            f"jitter retries; check the model or remove duplicated radii ({e})"
        )

    if jitter:
        logger.warning("Cholesky needed diagonal jitter %.3e", jitter)
    L.setflags(write=False)
    return CholeskyFactor(L, jitter_applied=jitter)


def eigendecompose(cov):
    """Full eigendecomposition, eigenvalues descending.

    Eigenvalues in [-1e-12·trace, 0) are clamped to zero.

    Raises:
        IndefiniteMatrixError: If an eigenvalue is below -1e-12·trace.
    """
    c = np.asarray(cov.entries, dtype=float)
    values, vectors = scipy.linalg.eigh(c)
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()

    floor = -EIGEN_NOISE * abs(cov.trace)
    if values[-1] < floor:
        raise IndefiniteMatrixError(
            f"Radial covariance matrix has eigenvalue {values[-1]:.3e} below {floor:.3e}"
        )
    values = np.maximum(values, 0.0)
    values.setflags(write=False)
    vectors.setflags(write=False)
    return KLFactor(values, vectors, retained=values.size, trace_fraction=1.0)


def truncate_kl(factor, fraction):
    """Keep the fewest leading eigenpairs holding `fraction` of the trace.

    Args:
        factor (KLFactor): Decomposed factor.
        fraction (float): Requested trace fraction in (0, 1].

    Returns:
        KLFactor: Same eigenpairs with M₁ and the retained fraction set.
    """
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"KL fraction must lie in (0, 1], got {fraction}")
    cumulative = np.cumsum(factor.eigenvalues)
    total = cumulative[-1]
    if total <= 0:
        retained = factor.eigenvalues.size
        retained_fraction = 1.0
    else:
        retained = int(np.searchsorted(cumulative, fraction * total, side="left")) + 1
        retained = min(retained, factor.eigenvalues.size)
        retained_fraction = float(cumulative[retained - 1] / total)
    logger.debug("KL truncation keeps %d of %d eigenpairs (%.4f of trace)",
                 retained, factor.eigenvalues.size, retained_fraction)
    return KLFactor(factor.eigenvalues, factor.eigenvectors, retained, retained_fraction)


def correlate(factor, white):
    """Map independent N(0, 1) values to correlated radial values.

    Args:
        factor (CholeskyFactor or KLFactor): Correlating factor.
        white (np.ndarray): Shape (W,) or (count, W) with W = factor.white_dim.

    Returns:
        np.ndarray: Shape (M,) or (count, M).

    Raises:
        DimensionMismatchError: If the white vector length is not W.
    """
    white = np.asarray(white, dtype=float)
    if white.shape[-1] != factor.white_dim:
        raise DimensionMismatchError(
            f"White vector length {white.shape[-1]} does not match factor dimension {factor.white_dim}"
        )
    if isinstance(factor, CholeskyFactor):
        return white @ factor.L.T
    m1 = factor.retained
    scaled = white * np.sqrt(factor.eigenvalues[:m1])
    return scaled @ factor.eigenvectors[:, :m1].T


def build_factor(grid, model, method=CHOLESKY, kl_fraction=0.95, cache=None):
    """Factor the radial covariance of a grid, optionally through a cache.

    Args:
        grid (RadialGrid): Radii.
        model (RadialCovarianceModel): Radial covariance.
        method (str): "cholesky" or "kl".
        kl_fraction (float): Trace fraction kept by the KL method.
        cache (CacheManager, optional): Cache for factor arrays.

    Returns:
        CholeskyFactor or KLFactor.
    """
    if method not in RADIAL_METHODS:
        raise DomainError(f"Unknown radial method {method!r}; expected one of {RADIAL_METHODS}")

    key = None
    if cache is not None:
        key = "|".join([
            method,
            repr(float(model.sigma)),
            repr(float(model.corr_length)),
            ",".join(repr(float(r)) for r in grid.radii),
        ])
        cached = cache.get(key)
        if cached is not None:
            logger.debug("Radial factor cache hit")
            return _factor_from_arrays(method, cached, kl_fraction)

    matrix = build_radial_matrix(grid, model)
    if method == CHOLESKY:
        factor = cholesky(matrix)
        arrays = {"L": factor.L, "jitter": np.array(factor.jitter_applied)}
    else:
        full = eigendecompose(matrix)
        arrays = {"eigenvalues": full.eigenvalues, "eigenvectors": full.eigenvectors}
        factor = truncate_kl(full, kl_fraction)

    if cache is not None:
        cache.set(key, arrays)
    return factor


def _factor_from_arrays(method, arrays, kl_fraction):
    if method == CHOLESKY:
        return CholeskyFactor(arrays["L"], jitter_applied=float(arrays["jitter"]))
    full = KLFactor(arrays["eigenvalues"], arrays["eigenvectors"],
                    retained=arrays["eigenvalues"].size, trace_fraction=1.0)
    return truncate_kl(full, kl_fraction)


def write_eigenvalues_csv(factor, path):
    """Dump `i,lambda_i,cumulative_fraction` rows (i starting at 1)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cumulative = np.cumsum(factor.eigenvalues)
    total = cumulative[-1] if cumulative[-1] > 0 else 1.0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["i", "lambda_i", "cumulative_fraction"])
        for i, (value, running) in enumerate(zip(factor.eigenvalues, cumulative), start=1):
            writer.writerow([i, f"{value:.17g}", f"{running / total:.17g}"])
    return path
