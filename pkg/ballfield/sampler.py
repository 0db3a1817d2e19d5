"""
Spectral simulation of Gaussian random fields on the sphere and in the ball.

Each realization is the normalized sum of N random harmonic terms

    f(r_i, φ, θ) = 2√(πA)/√N · Σ_l ( ξ_l(r_i)·Re Y + η_l(r_i)·Im Y ),

with the degree n_l drawn from {aₙ/A}, the order k_l uniform on
[-n_l, n_l], and ξ_l, η_l radial vectors correlated by the radial factor.
The ξ_l, η_l vectors are drawn fresh for every term.

Randomness: realization j of seed s owns SeedSequence([s, j]), spawned into
four Philox streams (degree, order, xi-white, eta-white). Term l takes the
l-th draws of each stream, so a realization is a pure function of (s, j)
and ensembles are reproducible under any thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from ballfield.grids import BallGrid, PointSet, SphereGrid
from ballfield.radial_factorization import (
    CHOLESKY,
    RADIAL_METHODS,
    CholeskyFactor,
    correlate,
)
from ballfield.special_functions import normalized_assoc_legendre
from ballfield.utils.error_handler import DimensionMismatchError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20210127
DEFAULT_TERMS = 2000

# Terms evaluated per block, bounding the (terms × directions) work arrays
_TERM_BLOCK = 256


@dataclass(frozen=True)
class SamplerConfig:
    """Settings of the spectral sampler.

    Attributes:
        n_terms (int): Number of spectral terms N.
        seed (int): Master seed (non-negative, below 2**64).
        radial_method (str): "cholesky" or "kl".
        kl_fraction (float): Trace fraction kept by the KL method.
    """

    n_terms: int = DEFAULT_TERMS
    seed: int = DEFAULT_SEED
    radial_method: str = CHOLESKY
    kl_fraction: float = 0.95

    def __post_init__(self):
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise DomainError(f"n_terms must be a positive integer, got {self.n_terms}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be an integer in [0, 2**64), got {self.seed}")
        if self.radial_method not in RADIAL_METHODS:
            raise DomainError(f"radial_method must be one of {RADIAL_METHODS}, got {self.radial_method!r}")
        if not 0.0 < self.kl_fraction <= 1.0:
            raise DomainError(f"kl_fraction must lie in (0, 1], got {self.kl_fraction}")


@dataclass(frozen=True)
class RealizationStreams:
    """Independent random streams of one realization."""

    degree: np.random.Generator
    order: np.random.Generator
    xi: np.random.Generator
    eta: np.random.Generator


def realization_streams(seed, index):
    """Deterministic streams for realization `index` of master `seed`."""
    root = np.random.SeedSequence([int(seed), int(index)])
    ss_degree, ss_order, ss_xi, ss_eta = root.spawn(4)
    return RealizationStreams(
        degree=np.random.Generator(np.random.Philox(ss_degree)),
        order=np.random.Generator(np.random.Philox(ss_order)),
        xi=np.random.Generator(np.random.Philox(ss_xi)),
        eta=np.random.Generator(np.random.Philox(ss_eta)),
    )


@dataclass(frozen=True, eq=False)
class HarmonicDraw:
    """Random ingredients of all N terms of one realization.

    Attributes:
        degrees (np.ndarray): n_l per term.
        orders (np.ndarray): k_l per term, -n_l <= k_l <= n_l.
        xi (np.ndarray): Correlated radial coefficients, shape (N, M).
        eta (np.ndarray): Correlated radial coefficients, shape (N, M).
    """

    degrees: np.ndarray
    orders: np.ndarray
    xi: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True, eq=False)
class Realization:
    """Field values of one draw on an evaluation set.

    Attributes:
        grid: BallGrid, SphereGrid or PointSet the values belong to.
        values (np.ndarray): One finite value per node, in grid order.
        seed (int): Master seed.
        realization_index (int): Index of the draw within its ensemble.
    """

    grid: Any
    values: np.ndarray
    seed: int
    realization_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.grid.size:
            raise DimensionMismatchError(
                f"Realization has {values.size} values for a grid of {self.grid.size} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("Realization values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """R realizations stored as an (R × nodes) array."""

    grid: Any
    values: np.ndarray
    seed: int
    indices: np.ndarray

    @property
    def size(self):
        return self.values.shape[0]

    def realization(self, j):
        return Realization(self.grid, self.values[j], self.seed, int(self.indices[j]))

    def __iter__(self):
        for j in range(self.size):
            yield self.realization(j)


def sample_degree(spectrum, rng, size=None):
    """Draw degree(s) n with probability aₙ/A by inverse-CDF lookup.

    Args:
        spectrum (AngularSpectrum): Spectrum with A > 0.
        rng (np.random.Generator): Random stream.
        size (int, optional): Number of draws; a scalar int when omitted.

    Returns:
        int or np.ndarray: Degree(s).
    """
    u = rng.random(size) * spectrum.total_mass
    degrees = np.searchsorted(spectrum.cumulative, u, side="right")
    degrees = np.minimum(degrees, spectrum.n_max)
    return int(degrees) if size is None else degrees.astype(np.int64)


def sample_order(n, rng):
    """Draw order(s) uniformly from {-n, …, n}; n may be an array."""
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 0):
        raise DomainError("Degree must be non-negative")
    orders = rng.integers(-n, n + 1)
    return int(orders) if np.ndim(orders) == 0 else orders


class HarmonicTable:
    """Normalized Legendre values for every (n, k >= 0) at fixed directions.

    The table is computed once over the distinct colatitudes of the
    evaluation set and is read-only afterwards, so realizations running on
    several threads share it safely.
    """

    def __init__(self, phi, theta, n_max):
        """Initialize the HarmonicTable.

        Args:
            phi: Longitude per direction.
            theta: Colatitude per direction.
            n_max (int): Largest degree that can be drawn.
        """
        self.phi = np.asarray(phi, dtype=float).ravel()
        theta = np.asarray(theta, dtype=float).ravel()
        unique_theta, self.theta_index = np.unique(theta, return_inverse=True)
        self.n_max = int(n_max)

        x = np.clip(np.cos(unique_theta), -1.0, 1.0)
        table = np.empty((self.n_max + 1, self.n_max + 1, unique_theta.size))
        for k in range(self.n_max + 1):
            table[:, k, :] = normalized_assoc_legendre(self.n_max, k, x)
        table.setflags(write=False)
        self._table = table

    @property
    def size(self):
        return self.phi.size

    def real_imag(self, degrees, orders):
        """Re and Im of Y_{n_l}^{k_l} at every direction.

        Returns:
            tuple: Two arrays of shape (len(degrees), directions).
        """
        m = np.abs(orders)
        legendre = self._table[degrees, m][:, self.theta_index]
        angle = m[:, None] * self.phi[None, :]
        real = legendre * np.cos(angle)
        imag = legendre * np.sin(angle)

        # Y_n^{-m} = (-1)^m conj(Y_n^m)
        parity = np.where(m % 2 == 0, 1.0, -1.0)
        negative = orders < 0
        re_sign = np.where(negative, parity, 1.0)
        im_sign = np.where(negative, -parity, 1.0)
        return real * re_sign[:, None], imag * im_sign[:, None]


def draw_terms(config, spectrum, factor, streams):
    """Draw degrees, orders and correlated radial coefficients for N terms."""
    n_terms = config.n_terms
    degrees = sample_degree(spectrum, streams.degree, size=n_terms)
    orders = sample_order(degrees, streams.order)
    xi = correlate(factor, streams.xi.standard_normal((n_terms, factor.white_dim)))
    eta = correlate(factor, streams.eta.standard_normal((n_terms, factor.white_dim)))
    return HarmonicDraw(degrees, orders, xi, eta)


def _accumulate(draw, table, amplitude, radius_index=None):
    """Sum the terms of a draw over a harmonic table.

    With radius_index None the result has shape (M, directions); otherwise
    direction p is evaluated at radius radius_index[p] and the result has
    shape (directions,).
    """
    n_terms = draw.degrees.size
    if radius_index is None:
        field = np.zeros((draw.xi.shape[1], table.size))
    else:
        field = np.zeros(table.size)

    for start in range(0, n_terms, _TERM_BLOCK):
        block = slice(start, min(start + _TERM_BLOCK, n_terms))
        real, imag = table.real_imag(draw.degrees[block], draw.orders[block])
        xi = draw.xi[block]
        eta = draw.eta[block]
        if radius_index is None:
            field += xi.T @ real + eta.T @ imag
        else:
            field += np.einsum("lp,lp->p", xi[:, radius_index], real)
            field += np.einsum("lp,lp->p", eta[:, radius_index], imag)
    return field * amplitude


def _amplitude(config, spectrum):
    return 2.0 * math.sqrt(math.pi * spectrum.total_mass) / math.sqrt(config.n_terms)


def _check_factor(factor, radial_size):
    if factor.size != radial_size:
        raise DimensionMismatchError(
            f"Radial factor has dimension {factor.size} but the grid has {radial_size} radii"
        )


def _resolve_streams(config, streams, realization_index):
    if streams is None:
        return realization_streams(config.seed, realization_index)
    return streams


def _unit_factor():
    return CholeskyFactor(np.ones((1, 1)))


def simulate_sphere(config, spectrum, points, streams=None, realization_index=0, table=None):
    """Simulate an isotropic field on the unit sphere.

    Args:
        config (SamplerConfig): Sampler settings.
        spectrum (AngularSpectrum): Angular spectrum.
        points: SphereGrid or sequence of SphericalDirection.
        streams (RealizationStreams, optional): Random streams; derived from
            (config.seed, realization_index) when omitted.
        realization_index (int): Provenance index.
        table (HarmonicTable, optional): Precomputed table for the points.

    Returns:
        Realization: Values with single-point variance A.
    """
    if isinstance(points, SphereGrid):
        grid = points
        phi, theta = points.directions()
    else:
        grid = _DirectionSet(tuple(points))
        phi = np.array([d.phi for d in grid.directions], dtype=float)
        theta = np.array([d.theta for d in grid.directions], dtype=float)

    if table is None:
        table = HarmonicTable(phi, theta, spectrum.n_max)
    streams = _resolve_streams(config, streams, realization_index)
    draw = draw_terms(config, spectrum, _unit_factor(), streams)
    values = _accumulate(draw, table, _amplitude(config, spectrum))[0]
    return Realization(grid, values, config.seed, realization_index)


def build_table(grid, spectrum):
    """HarmonicTable for the directions of a BallGrid, SphereGrid or PointSet."""
    if isinstance(grid, BallGrid):
        phi, theta = grid.sphere.directions()
    elif isinstance(grid, SphereGrid):
        phi, theta = grid.directions()
    else:
        phi, theta = grid.phi, grid.theta
    return HarmonicTable(phi, theta, spectrum.n_max)


def simulate_ball(config, spectrum, factor, grid, streams=None, realization_index=0, table=None):
    """Simulate a field in the ball on a BallGrid or PointSet.

    Args:
        config (SamplerConfig): Sampler settings.
        spectrum (AngularSpectrum): Angular spectrum.
        factor (CholeskyFactor or KLFactor): Radial factor built on exactly
            the grid's radii.
        grid (BallGrid or PointSet): Evaluation nodes.
        streams (RealizationStreams, optional): Random streams; derived from
            (config.seed, realization_index) when omitted.
        realization_index (int): Provenance index.
        table (HarmonicTable, optional): Precomputed table for the grid.

    Returns:
        Realization: Field values in grid order.

    Raises:
        DimensionMismatchError: If the factor does not match the radii.
    """
    _check_factor(factor, grid.radial.size)
    if table is None:
        table = build_table(grid, spectrum)
    streams = _resolve_streams(config, streams, realization_index)
    draw = draw_terms(config, spectrum, factor, streams)
    amplitude = _amplitude(config, spectrum)

    if isinstance(grid, PointSet):
        values = _accumulate(draw, table, amplitude, radius_index=grid.radius_index)
    else:
        values = _accumulate(draw, table, amplitude).ravel()
    return Realization(grid, values, config.seed, realization_index)


def generate_ensemble(config, spectrum, factor, grid, count, threads=1, progress=None):
    """Generate R independent realizations.

    Realization j uses the streams of (config.seed, j), so the ensemble does
    not depend on the thread count or completion order.

    Args:
        config (SamplerConfig): Sampler settings.
        spectrum (AngularSpectrum): Angular spectrum.
        factor (CholeskyFactor or KLFactor): Radial factor.
        grid (BallGrid or PointSet): Evaluation nodes.
        count (int): Number of realizations R >= 1.
        threads (int): Worker threads.
        progress (callable, optional): Called once per finished realization.

    Returns:
        Ensemble: Values of shape (R, nodes).
    """
    if int(count) != count or count < 1:
        raise DomainError(f"Ensemble size must be a positive integer, got {count}")
    count = int(count)
    _check_factor(factor, grid.radial.size)
    table = build_table(grid, spectrum)
    values = np.empty((count, grid.size))

    def run(j):
        realization = simulate_ball(config, spectrum, factor, grid, realization_index=j, table=table)
        values[j] = realization.values
        if progress is not None:
            progress()

    logger.debug("Generating %d realizations on %d nodes with %d thread(s)", count, grid.size, threads)
    if threads <= 1:
        for j in range(count):
            run(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # list() surfaces worker exceptions
            list(pool.map(run, range(count)))

    return Ensemble(grid, values, config.seed, np.arange(count))


@dataclass(frozen=True, eq=False)
class _DirectionSet:
    """Ad-hoc list of directions used by simulate_sphere."""

    directions: tuple

    @property
    def size(self):
        return len(self.directions)
