"""Grids, scalar fields, and the singular coordinate change.

Two grid kinds are used throughout:

* :class:`EdgeGrid` -- a polar (r, theta) tensor grid staggered away from the
  cone point, with either geometrically graded or uniform radii.  It carries
  the model-cone analysis and surfaces of revolution.
* :class:`TorusGrid` -- a doubly periodic Cartesian grid over the unit square
  fundamental domain of a flat torus, node-staggered so the identified corner
  (where a cone point may sit) carries no node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DomainError, InvalidParameterError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ConeAngle:
    """Cone angle 2*pi*beta along the divisor; beta in (0, 1]."""

    beta: float

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise InvalidParameterError(f"cone angle beta must lie in (0, 1], got {self.beta}")

    def __float__(self):
        return float(self.beta)


def _as_beta(beta) -> float:
    return float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)


@dataclass(frozen=True, eq=False)
class EdgeGrid:
    """Polar grid (r, theta) with radii staggered away from r = 0.

    Radii follow r_k = R_max * ratio**(k - N) for ratio > 1 (log-uniform),
    or r_k = R_max * k / N for ratio == 1.  theta is uniform with a
    power-of-two node count so discrete Fourier analysis in theta is exact.
    """

    r_nodes: np.ndarray
    theta_nodes: np.ndarray
    grading_ratio: float
    y_nodes: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        r = np.asarray(self.r_nodes, dtype=float)
        th = np.asarray(self.theta_nodes, dtype=float)
        object.__setattr__(self, "r_nodes", r)
        object.__setattr__(self, "theta_nodes", th)
        if r.ndim != 1 or r.size < 2:
            raise InvalidParameterError("r_nodes must be a 1-D array with at least 2 nodes")
        if r[0] <= 0.0 or np.any(np.diff(r) <= 0.0):
            raise InvalidParameterError("r_nodes must be strictly increasing and start above 0")
        m = th.size
        if m < 4 or (m & (m - 1)) != 0:
            raise InvalidParameterError(f"theta node count must be a power of 2 >= 4, got {m}")
        if not np.allclose(th, TWO_PI * np.arange(m) / m, atol=1e-13):
            raise InvalidParameterError("theta_nodes must be uniform on [0, 2*pi)")

    @property
    def n_r(self) -> int:
        return self.r_nodes.size

    @property
    def m_theta(self) -> int:
        return self.theta_nodes.size

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_r, self.m_theta)

    @property
    def r_max(self) -> float:
        return float(self.r_nodes[-1])

    @property
    def r_min(self) -> float:
        return float(self.r_nodes[0])

    def mesh(self):
        """Node coordinate arrays (R, Theta), each of shape (n_r, m_theta)."""
        return np.meshgrid(self.r_nodes, self.theta_nodes, indexing="ij")

    def interior_slice(self) -> slice:
        """Radial indices where centered stencils apply."""
        return slice(1, self.n_r - 1)


def grading_for_depth(N_r: int, depth: float) -> float:
    """Grading ratio placing r_1 at depth * R_max for an N_r-node grid."""
    if not (0.0 < depth < 1.0):
        raise InvalidParameterError("depth must lie in (0, 1)")
    return float(depth ** (1.0 / (1 - N_r)))


def make_grid(R_max: float, N_r: int, M_theta: int, grading_ratio: float) -> EdgeGrid:
    """Build an EdgeGrid with geometric grading toward r = 0.

    r_k = R_max * grading_ratio**(k - N_r), so r_1 = R_max * ratio**(1 - N_r);
    grading_ratio == 1 gives a uniform grid r_k = R_max * k / N_r.
    """
    if not (R_max > 0.0):
        raise InvalidParameterError(f"R_max must be positive, got {R_max}")
    if N_r < 8:
        raise InvalidParameterError(f"N_r must be at least 8, got {N_r}")
    if M_theta < 4 or (M_theta & (M_theta - 1)) != 0:
        raise InvalidParameterError(f"M_theta must be a power of 2 >= 4, got {M_theta}")
    if grading_ratio < 1.0:
        raise InvalidParameterError(f"grading_ratio must be >= 1, got {grading_ratio}")
    k = np.arange(1, N_r + 1, dtype=float)
    if grading_ratio == 1.0:
        r = R_max * k / N_r
    else:
        r = R_max * grading_ratio ** (k - N_r)
    theta = TWO_PI * np.arange(M_theta) / M_theta
    return EdgeGrid(r_nodes=r, theta_nodes=theta, grading_ratio=float(grading_ratio))


@dataclass(frozen=True)
class TorusGrid:
    """Offset N x N Cartesian grid on the unit square torus.

    Nodes sit at ((i + 1/2) h, (j + 1/2) h), h = 1/N, so the identified
    corner (0, 0) -- the cone point location -- is never a node.
    """

    n: int

    def __post_init__(self):
        if self.n < 8:
            raise InvalidParameterError(f"torus grid needs n >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    def mesh(self):
        """Node coordinates (X, Y) in [0,1)^2, shape (n, n)."""
        c = (np.arange(self.n) + 0.5) / self.n
        return np.meshgrid(c, c, indexing="ij")

    def wrapped_offsets(self):
        """Signed coordinates relative to the corner, wrapped to [-1/2, 1/2)."""
        x, y = self.mesh()
        return x - np.round(x), y - np.round(y)


Grid = Union[EdgeGrid, TorusGrid]

ROTATIONALLY_SYMMETRIC = "rotationally-symmetric"
GENERAL = "general"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Grid-sampled real function with symmetry metadata."""

    grid: Grid
    values: np.ndarray
    symmetry: str = GENERAL

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != self.grid.shape:
            raise InvalidParameterError(
                f"field shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidParameterError("field values must be finite")
        if self.symmetry not in (ROTATIONALLY_SYMMETRIC, GENERAL):
            raise InvalidParameterError(f"unknown symmetry flag {self.symmetry!r}")
        if self.symmetry == ROTATIONALLY_SYMMETRIC and isinstance(self.grid, EdgeGrid):
            spread = float(np.max(np.ptp(vals, axis=1)))
            scale = float(np.max(np.abs(vals))) or 1.0
            if spread > 1e-10 * scale:
                raise InvalidParameterError(
                    "field flagged rotationally symmetric but theta-variance is "
                    f"{spread:.3e} (relative to scale {scale:.3e})"
                )

    @staticmethod
    def from_function(grid: Grid, func, symmetry: str = GENERAL) -> "ScalarField":
        """Sample func over grid nodes; polar grids call func(r, theta)."""
        if isinstance(grid, EdgeGrid):
            rr, tt = grid.mesh()
            vals = np.broadcast_to(np.asarray(func(rr, tt), dtype=float), grid.shape).copy()
        else:
            xx, yy = grid.mesh()
            vals = np.broadcast_to(np.asarray(func(xx, yy), dtype=float), grid.shape).copy()
        return ScalarField(grid=grid, values=vals, symmetry=symmetry)

    def with_values(self, values: np.ndarray, symmetry: Optional[str] = None) -> "ScalarField":
        return ScalarField(grid=self.grid, values=values,
                           symmetry=self.symmetry if symmetry is None else symmetry)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def theta_variance(self) -> float:
        """Max spread across theta at fixed radius (polar grids only)."""
        if not isinstance(self.grid, EdgeGrid):
            raise DomainError("theta_variance is defined on EdgeGrid fields")
        return float(np.max(np.ptp(self.values, axis=1)))

    def is_rotationally_symmetric(self, rtol: float = 1e-10) -> bool:
        if not isinstance(self.grid, EdgeGrid):
            return False
        scale = float(np.max(np.abs(self.values))) or 1.0
        return self.theta_variance() <= rtol * scale


def coord_transform(z, beta, direction: str):
    """Map between smooth and singular holomorphic coordinates.

    to_singular:   zeta = z**beta / beta, branch fixed by arg z in [0, 2*pi).
    from_singular: z = (beta * zeta)**(1/beta), same branch convention.
    """
    b = _as_beta(beta)
    zc = np.asarray(z, dtype=complex)
    if direction == "to_singular":
        if np.any(zc == 0):
            raise DomainError("coord_transform is undefined at z = 0")
        rho = np.abs(zc)
        arg = np.mod(np.angle(zc), TWO_PI)
        out = (rho ** b) * np.exp(1j * b * arg) / b
    elif direction == "from_singular":
        w = b * zc
        if np.any(w == 0):
            raise DomainError("coord_transform is undefined at zeta = 0")
        rho = np.abs(w)
        # arg(beta*zeta) lives in [0, 2*pi*beta) on the principal branch
        arg = np.mod(np.angle(w), TWO_PI)
        out = (rho ** (1.0 / b)) * np.exp(1j * arg / b)
    else:
        raise InvalidParameterError(f"unknown direction {direction!r}")
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        return complex(out)
    return out
