"""
Legendre polynomials, associated Legendre functions and complex spherical
harmonics.

Conventions:
    Pₙᵏ includes the Condon-Shortley phase (-1)^k, so that
    Yₙ^{-k} = (-1)^k conj(Yₙᵏ). Directions are (phi, theta) with phi the
    longitude in [0, 2π) and theta the colatitude in [0, π].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ballfield.utils.error_handler import DomainError

# Hard cap on the spherical harmonic degree
N_MAX_CAP = 512

_FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class SphericalDirection:
    """A direction on the unit sphere.

    Attributes:
        phi (float): Longitude in radians, 0 <= phi < 2π.
        theta (float): Colatitude in radians, 0 <= theta <= π.
    """

    phi: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise DomainError(f"Colatitude must lie in [0, π], got {self.theta}")
        if not np.isfinite(self.phi):
            raise DomainError(f"Longitude must be finite, got {self.phi}")

    @classmethod
    def wrapped(cls, phi, theta):
        """Build a direction after reducing phi into [0, 2π)."""
        return cls(float(np.mod(phi, 2.0 * np.pi)), float(theta))


def unit_vector(phi, theta):
    """Cartesian unit vector(s) for longitude/colatitude pairs.

    Args:
        phi: Longitude(s) in radians.
        theta: Colatitude(s) in radians.

    Returns:
        np.ndarray: Array of shape (..., 3).
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sin_theta = np.sin(theta)
    return np.stack(
        (np.cos(phi) * sin_theta, np.sin(phi) * sin_theta, np.cos(theta)),
        axis=-1,
    )


def spherical_from_cartesian(vector):
    """Convert a Cartesian vector into (r, phi, theta).

    The origin maps to (0, 0, 0); phi is reduced into [0, 2π).
    """
    x, y, z = (float(c) for c in vector)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        return 0.0, 0.0, 0.0
    theta = math.acos(min(1.0, max(-1.0, z / r)))
    phi = math.atan2(y, x) % (2.0 * math.pi)
    return r, phi, theta


def _check_degree(n):
    if int(n) != n or n < 0:
        raise DomainError(f"Degree must be a non-negative integer, got {n}")
    if n > N_MAX_CAP:
        raise DomainError(f"Degree {n} exceeds the cap n_max={N_MAX_CAP}")
    return int(n)


def _check_cosine(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0) or np.any(~np.isfinite(x)):
        raise DomainError("Argument must lie in [-1, 1] (cosine of an angle)")
    return x


def legendre_poly(n, x):
    """Legendre polynomial Pₙ(x) by the three-term recurrence.

    Args:
        n (int): Degree, n >= 0.
        x (float or array): Argument(s) in [-1, 1].

    Returns:
        float or np.ndarray: Pₙ(x), exact at x = ±1.

    Raises:
        DomainError: If |x| > 1 or n is not a valid degree.
    """
    n = _check_degree(n)
    x = _check_cosine(x)

    p_prev = np.ones_like(x)
    if n == 0:
        result = p_prev
    else:
        p = x.copy()
        for m in range(2, n + 1):
            p, p_prev = ((2 * m - 1) * x * p - (m - 1) * p_prev) / m, p
        result = p

    result = np.where(x == 1.0, 1.0, result)
    result = np.where(x == -1.0, (-1.0) ** n, result)
    return float(result) if result.ndim == 0 else result


def legendre_series(coefficients, x):
    """Evaluate Σ aₙ Pₙ(x) in one Clenshaw pass.

    Args:
        coefficients: Sequence a₀..a_{n_max}.
        x (float or array): Argument(s) in [-1, 1].

    Returns:
        float or np.ndarray: The series value(s).
    """
    x = _check_cosine(x)
    value = np.polynomial.legendre.legval(x, np.asarray(coefficients, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def assoc_legendre(n, k, x):
    """Associated Legendre function Pₙᵏ(x) with the Condon-Shortley phase.

    P_k^k is evaluated in closed form (log space, to delay overflow of the
    double factorial), then the recurrence runs upward in n at fixed k.
    Unnormalized values overflow for large k; use
    normalized_assoc_legendre for spherical harmonics.

    Args:
        n (int): Degree.
        k (int): Order, 0 <= k <= n.
        x (float or array): Argument(s) in [-1, 1].

    Returns:
        float or np.ndarray: Pₙᵏ(x).

    Raises:
        DomainError: If k > n, k < 0 or |x| > 1.
    """
    n = _check_degree(n)
    if int(k) != k or k < 0 or k > n:
        raise DomainError(f"Order must satisfy 0 <= k <= n, got n={n}, k={k}")
    k = int(k)
    x = _check_cosine(x)

    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    if k == 0:
        p_kk = np.ones_like(x)
    else:
        # (2k-1)!! = Γ(2k+1) / (2^k Γ(k+1))
        log_double_factorial = gammaln(2 * k + 1) - k * np.log(2.0) - gammaln(k + 1)
        with np.errstate(divide="ignore"):
            magnitude = np.exp(log_double_factorial + k * np.log(s))
        p_kk = (-1.0) ** k * magnitude

    if n == k:
        result = p_kk
    else:
        p_prev = p_kk
        p = x * (2 * k + 1) * p_kk
        for m in range(k + 2, n + 1):
            p, p_prev = ((2 * m - 1) * x * p - (m + k - 1) * p_prev) / (m - k), p
        result = p
    return float(result) if result.ndim == 0 else result


def normalized_assoc_legendre(n_max, k, x):
    """Normalized associated Legendre values for all degrees at one order.

    Row n holds √((2n+1)/(4π) · (n-k)!/(n+k)!) · Pₙᵏ(x), so that
    Yₙᵏ(φ, θ) = row[n](cos θ) · e^{ikφ}. Rows n < k are zero.

    Args:
        n_max (int): Largest degree.
        k (int): Order, 0 <= k <= n_max.
        x: Argument(s) in [-1, 1].

    Returns:
        np.ndarray: Array of shape (n_max + 1, len(x)).
    """
    n_max = _check_degree(n_max)
    if int(k) != k or k < 0 or k > n_max:
        raise DomainError(f"Order must satisfy 0 <= k <= n_max, got k={k}")
    k = int(k)
    x = np.atleast_1d(_check_cosine(x))

    table = np.zeros((n_max + 1, x.size))
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))

    # Seed N_k^k P_k^k; the normalization and the double factorial combine
    # in log space.
    log_seed = (
        0.5 * (np.log(2 * k + 1) - np.log(_FOUR_PI) + gammaln(2 * k + 1))
        - k * np.log(2.0)
        - gammaln(k + 1)
    )
    if k == 0:
        seed = np.full_like(x, np.exp(log_seed))
    else:
        with np.errstate(divide="ignore"):
            seed = (-1.0) ** k * np.exp(log_seed + k * np.log(s))
    table[k] = seed

    if n_max > k:
        table[k + 1] = np.sqrt(2 * k + 3) * x * seed
    for n in range(k + 2, n_max + 1):
        a = np.sqrt((4.0 * n * n - 1.0) / (n * n - k * k))
        b = -np.sqrt(
            (2.0 * n + 1.0) * ((n - 1.0) ** 2 - k * k)
            / ((2.0 * n - 3.0) * (n * n - k * k))
        )
        table[n] = a * x * table[n - 1] + b * table[n - 2]
    return table


def sph_harm(n, k, direction):
    """Fully normalized complex spherical harmonic Yₙᵏ(φ, θ).

    Args:
        n (int): Degree.
        k (int): Order, -n <= k <= n.
        direction (SphericalDirection): Evaluation direction.

    Returns:
        complex: Yₙᵏ at the direction.

    Raises:
        DomainError: If |k| > n.
    """
    n = _check_degree(n)
    if int(k) != k or abs(k) > n:
        raise DomainError(f"Order must satisfy |k| <= n, got n={n}, k={k}")
    k = int(k)
    m = abs(k)

    legendre = normalized_assoc_legendre(n, m, math.cos(direction.theta))[n, 0]
    value = complex(legendre * math.cos(m * direction.phi), legendre * math.sin(m * direction.phi))
    if k < 0:
        value = (-1) ** m * value.conjugate()
    return value
