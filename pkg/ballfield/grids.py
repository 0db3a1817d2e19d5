"""
Evaluation grids on the sphere and in the ball.

Node ordering of a BallGrid is r-major, then theta, then phi:
index = (i_r · n_theta + i_theta) · n_phi + i_phi. The file formats in
grids_io depend on this ordering.
"""

from dataclasses import dataclass

import numpy as np

from ballfield.covariance import BallPoint
from ballfield.radial_factorization import RadialGrid
from ballfield.utils.error_handler import DomainError, GridError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Tensor grid of longitudes and colatitudes.

    Attributes:
        phi (np.ndarray): Sorted longitudes in [0, 2π).
        theta (np.ndarray): Sorted colatitudes in [0, π].
    """

    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float).ravel()
        theta = np.array(self.theta, dtype=float).ravel()
        if phi.size < 1:
            raise DomainError("Sphere grid needs n_phi >= 1")
        if theta.size < 2:
            raise DomainError("Sphere grid needs n_theta >= 2")
        if phi[0] < 0.0 or phi[-1] >= TWO_PI or np.any(np.diff(phi) <= 0):
            raise DomainError("Longitudes must be strictly increasing in [0, 2π)")
        if theta[0] < 0.0 or theta[-1] > np.pi or np.any(np.diff(theta) <= 0):
            raise DomainError("Colatitudes must be strictly increasing in [0, π]")
        phi.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_counts(cls, n_phi, n_theta):
        """Uniform grid: phi = 2πj/n_phi, theta = πi/(n_theta - 1), poles included."""
        if n_phi < 1 or n_theta < 2:
            raise DomainError(f"Need n_phi >= 1 and n_theta >= 2, got {n_phi}, {n_theta}")
        phi = TWO_PI * np.arange(n_phi) / n_phi
        theta = np.linspace(0.0, np.pi, n_theta)
        return cls(phi, theta)

    @property
    def n_phi(self):
        return self.phi.size

    @property
    def n_theta(self):
        return self.theta.size

    @property
    def size(self):
        return self.n_phi * self.n_theta

    def directions(self):
        """(phi, theta) per node, theta-major then phi."""
        phi = np.tile(self.phi, self.n_theta)
        theta = np.repeat(self.theta, self.n_phi)
        return phi, theta

    def __eq__(self, other):
        return (isinstance(other, SphereGrid)
                and np.array_equal(self.phi, other.phi)
                and np.array_equal(self.theta, other.theta))


@dataclass(frozen=True, eq=False)
class BallGrid:
    """Tensor product of a radial grid and a sphere grid."""

    radial: RadialGrid
    sphere: SphereGrid

    @property
    def radii(self):
        return self.radial.radii

    @property
    def shape(self):
        """(M, n_theta, n_phi)."""
        return self.radial.size, self.sphere.n_theta, self.sphere.n_phi

    @property
    def size(self):
        return self.radial.size * self.sphere.size

    def node_index(self, i_r, i_theta, i_phi):
        return int(np.ravel_multi_index((i_r, i_theta, i_phi), self.shape))

    def node_coords(self, index):
        """(i_r, i_theta, i_phi) of a flat node index."""
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def coordinates(self):
        """(r, phi, theta) arrays per node in grid order."""
        m, n_theta, n_phi = self.shape
        r = np.repeat(self.radii, n_theta * n_phi)
        phi, theta = self.sphere.directions()
        return r, np.tile(phi, m), np.tile(theta, m)

    def cartesian(self):
        r, phi, theta = self.coordinates()
        sin_theta = np.sin(theta)
        return np.stack((r * sin_theta * np.cos(phi), r * sin_theta * np.sin(phi), r * np.cos(theta)), axis=-1)

    def point(self, index):
        i_r, i_theta, i_phi = self.node_coords(index)
        return BallPoint.from_spherical(self.radii[i_r], self.sphere.phi[i_phi], self.sphere.theta[i_theta])

    def __eq__(self, other):
        return isinstance(other, BallGrid) and self.radial == other.radial and self.sphere == other.sphere


@dataclass(frozen=True, eq=False)
class PointSet:
    """Scattered ball points sharing a radial grid.

    Attributes:
        radial (RadialGrid): Distinct radii of the points.
        radius_index (np.ndarray): Index into radial.radii per point.
        phi (np.ndarray): Longitude per point.
        theta (np.ndarray): Colatitude per point.
    """

    radial: RadialGrid
    radius_index: np.ndarray
    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        index = np.asarray(self.radius_index, dtype=int).ravel()
        phi = np.asarray(self.phi, dtype=float).ravel()
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not (index.size == phi.size == theta.size) or index.size == 0:
            raise GridError("Point set arrays must be non-empty and of equal length")
        if index.min() < 0 or index.max() >= self.radial.size:
            raise GridError("Point radius index outside the radial grid")
        object.__setattr__(self, "radius_index", index)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_ball_points(cls, points, decimals=12):
        """Group points by radius (rounded to `decimals`) into a point set.

        Points at the origin are not representable: the radial grid lives
        in (0, 1].
        """
        radii = np.array([p.r for p in points], dtype=float)
        if np.any(radii <= 0):
            raise GridError("Point sets cannot contain the origin")
        rounded = np.round(radii, decimals)
        unique, inverse = np.unique(rounded, return_inverse=True)
        # Grid radii are the first original radius of each group
        representatives = np.array([radii[np.flatnonzero(inverse == i)[0]] for i in range(unique.size)])
        return cls(
            RadialGrid(representatives),
            inverse,
            [p.direction.phi for p in points],
            [p.direction.theta for p in points],
        )

    @property
    def size(self):
        return self.radius_index.size

    @property
    def radii(self):
        return self.radial.radii[self.radius_index]

    def point(self, index):
        return BallPoint.from_spherical(self.radii[index], self.phi[index], self.theta[index])
