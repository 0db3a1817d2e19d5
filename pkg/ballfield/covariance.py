"""
Radial, angular and product covariance models for fields in the unit ball.

The product covariance is C(x, y) = C_r(r_x, r_y) · C_α(α) with the
proportionality constant fixed to 1, so the point variance is σ²·A where
A = Σ aₙ is the angular total mass.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ballfield.special_functions import (
    N_MAX_CAP,
    SphericalDirection,
    legendre_series,
    unit_vector,
)
from ballfield.utils.error_handler import DomainError

logger = logging.getLogger(__name__)

DEFAULT_TAIL_TOLERANCE = 1e-8


@dataclass(frozen=True)
class RadialCovarianceModel:
    """Homogeneous exponential radial covariance σ²·exp(-|r_x - r_y| / I).

    Attributes:
        sigma (float): Standard deviation, > 0.
        corr_length (float): Correlation length I, > 0.
    """

    sigma: float
    corr_length: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not (self.corr_length > 0 and math.isfinite(self.corr_length)):
            raise DomainError(f"corr_length must be positive, got {self.corr_length}")

    @property
    def variance(self):
        return self.sigma * self.sigma


@dataclass(frozen=True, eq=False)
class AngularSpectrum:
    """Truncated Schoenberg coefficients {aₙ} of an isotropic covariance.

    Attributes:
        coefficients (np.ndarray): a₀..a_{n_max}, all non-negative.
        rho (float, optional): Set for the geometric family aₙ = scale·ρⁿ,
            enabling the closed-form angular evaluator.
        scale (float): Multiplier of the geometric family (1 unless the
            spectrum was normalized).
    """

    coefficients: np.ndarray
    rho: Optional[float] = None
    scale: float = 1.0
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=float)
        if coefficients.ndim != 1 or coefficients.size == 0:
            raise DomainError("Spectrum needs at least one coefficient")
        if coefficients.size - 1 > N_MAX_CAP:
            raise DomainError(f"Spectrum degree {coefficients.size - 1} exceeds cap {N_MAX_CAP}")
        if np.any(~np.isfinite(coefficients)):
            raise DomainError("Spectrum coefficients must be finite")
        if np.any(coefficients < 0):
            raise DomainError("Spectrum coefficients must be non-negative (Schoenberg condition)")
        cumulative = np.cumsum(coefficients)
        if cumulative[-1] <= 0:
            raise DomainError("Spectrum total mass must be positive")
        coefficients.setflags(write=False)
        cumulative.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "cumulative", cumulative)

    @property
    def n_max(self):
        return self.coefficients.size - 1

    @property
    def total_mass(self):
        """A = Σ aₙ."""
        return float(self.cumulative[-1])

    @property
    def probabilities(self):
        return self.coefficients / self.total_mass

    @property
    def geometric_tail(self):
        """Mass scale·ρ^{n_max+1}/(1-ρ) dropped by truncating the geometric family.

        None when the spectrum is not geometric.
        """
        if self.rho is None:
            return None
        return self.scale * self.rho ** (self.n_max + 1) / (1.0 - self.rho)

    def normalized(self):
        """Spectrum rescaled by 1/A, so that C_α(0) = 1."""
        mass = self.total_mass
        return AngularSpectrum(self.coefficients / mass, rho=self.rho, scale=self.scale / mass)


@dataclass(frozen=True)
class BallPoint:
    """A point of the closed unit ball in spherical coordinates."""

    r: float
    direction: SphericalDirection

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise DomainError(f"Radius must lie in [0, 1], got {self.r}")

    @classmethod
    def from_spherical(cls, r, phi, theta):
        return cls(float(r), SphericalDirection.wrapped(phi, theta))

    def cartesian(self):
        return self.r * unit_vector(self.direction.phi, self.direction.theta)


@dataclass(frozen=True)
class ProductCovariance:
    """Product covariance C_r(r_x, r_y) · C_α(α).

    Attributes:
        radial (RadialCovarianceModel): Radial factor.
        angular (AngularSpectrum): Angular spectrum.
        exact_series (bool): Evaluate C_α by its truncated series even when
            a closed form is available.

    The closed form sums the untruncated geometric series, so it is used
    only while the truncated tail stays below DEFAULT_TAIL_TOLERANCE.
    """

    radial: RadialCovarianceModel
    angular: AngularSpectrum
    exact_series: bool = False

    @property
    def uses_closed_form(self):
        tail = self.angular.geometric_tail
        return not self.exact_series and tail is not None and tail < DEFAULT_TAIL_TOLERANCE

    def angular_cov(self, alpha):
        if self.uses_closed_form:
            return self.angular.scale * angular_cov_closed_geometric(self.angular.rho, alpha)
        return angular_cov_series(self.angular, alpha)

    @property
    def point_variance(self):
        """σ²·A, the value at coincident points."""
        return self.radial.variance * self.angular.total_mass


def _check_rho(rho):
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0.0) or np.any(alpha > np.pi) or np.any(~np.isfinite(alpha)):
        raise DomainError("Angle must lie in [0, π]")
    return alpha


def radial_cov(model, r_x, r_y):
    """σ²·exp(-|r_x - r_y| / I); broadcasts over array arguments."""
    r_x = np.asarray(r_x, dtype=float)
    r_y = np.asarray(r_y, dtype=float)
    if np.any(r_x < 0) or np.any(r_y < 0):
        raise DomainError("Radii must be non-negative")
    value = model.variance * np.exp(-np.abs(r_x - r_y) / model.corr_length)
    return float(value) if value.ndim == 0 else value


def default_n_max(rho, tail_tolerance=DEFAULT_TAIL_TOLERANCE, cap=N_MAX_CAP):
    """Smallest n with ρⁿ/(1-ρ) < tail_tolerance, capped.

    Args:
        rho (float): Geometric ratio in (0, 1).
        tail_tolerance (float): Bound on the truncated tail.
        cap (int): Largest degree allowed.

    Returns:
        int: Truncation degree.
    """
    _check_rho(rho)
    n = math.ceil(math.log(tail_tolerance * (1.0 - rho)) / math.log(rho))
    n = max(n, 0)
    # guard the ceil against rounding at exact powers
    while n > 0 and rho ** (n - 1) / (1.0 - rho) < tail_tolerance:
        n -= 1
    while rho ** n / (1.0 - rho) >= tail_tolerance:
        n += 1
    if n > cap:
        logger.warning("Truncation degree %d capped at %d; tail bound exceeds %g", n, cap, tail_tolerance)
        n = cap
    return n


def geometric_spectrum(rho, n_max):
    """Spectrum aₙ = ρⁿ for n = 0..n_max.

    Args:
        rho (float): Ratio in (0, 1).
        n_max (int): Truncation degree.

    Returns:
        AngularSpectrum: Spectrum with total mass (1 - ρ^{n_max+1}) / (1 - ρ).

    Raises:
        DomainError: If rho is outside (0, 1) or n_max is negative.
    """
    _check_rho(rho)
    if int(n_max) != n_max or n_max < 0:
        raise DomainError(f"n_max must be a non-negative integer, got {n_max}")
    coefficients = rho ** np.arange(int(n_max) + 1, dtype=float)
    return AngularSpectrum(coefficients, rho=float(rho))


def angular_cov_series(spectrum, alpha):
    """Truncated Schoenberg series Σ aₙ Pₙ(cos α)."""
    alpha = _check_alpha(alpha)
    return legendre_series(spectrum.coefficients, np.clip(np.cos(alpha), -1.0, 1.0))


def angular_cov_closed_geometric(rho, alpha):
    """Closed form of Σ ρⁿ Pₙ(cos α) = 1 / √(1 - 2ρ cos α + ρ²)."""
    _check_rho(rho)
    alpha = _check_alpha(alpha)
    value = 1.0 / np.sqrt(1.0 - 2.0 * rho * np.cos(alpha) + rho * rho)
    return float(value) if value.ndim == 0 else value


def geodesic_angle(a, b):
    """Angle between the directions of two ball points.

    Returns 0 when either point is the origin, where the direction is
    undefined.
    """
    if a.r == 0.0 or b.r == 0.0:
        return 0.0
    u = unit_vector(a.direction.phi, a.direction.theta)
    v = unit_vector(b.direction.phi, b.direction.theta)
    return float(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0)))


def product_cov(cov, a, b):
    """C_r(a.r, b.r) · C_α(geodesic_angle(a, b))."""
    return radial_cov(cov.radial, a.r, b.r) * float(cov.angular_cov(geodesic_angle(a, b)))


def write_spectrum_csv(spectrum, path):
    """Write `n,a_n` rows followed by a `# A=<value>` summary line.

    Args:
        spectrum (AngularSpectrum): Spectrum to export.
        path (str or Path): Destination file.

    Returns:
        Path: The written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["n", "a_n"])
        for n, a_n in enumerate(spectrum.coefficients):
            writer.writerow([n, f"{a_n:.17g}"])
        f.write(f"# A={spectrum.total_mass:.17g}\n")
    return path
