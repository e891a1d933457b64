"""Finite-difference engines shared by the geometry, solver and analysis modules.

Everything here is artifact plumbing: radial differentiation on graded grids,
flux-form Laplace-Beltrami operators for surfaces of revolution, the periodic
5-point Laplacian on the torus grid, and the closed-form conic data (theta
function Green kernel) of the flat torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .errors import (
    InvalidParameterError,
    SingularSystemError,
    StencilUnderflowError,
)
from .grids import EdgeGrid, TorusGrid

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# spectral theta derivatives (theta count is a power of two, so rfft is exact)
# ---------------------------------------------------------------------------

def theta_modes(m_theta: int) -> np.ndarray:
    return np.arange(m_theta // 2 + 1)


def dtheta(values: np.ndarray) -> np.ndarray:
    """d/dtheta along axis 1 via rfft."""
    m = values.shape[1]
    hat = np.fft.rfft(values, axis=1)
    k = theta_modes(m)
    hat *= 1j * k
    if m % 2 == 0:
        hat[:, -1] = 0.0  # Nyquist mode has no well-defined odd derivative
    return np.fft.irfft(hat, n=m, axis=1)


def d2theta(values: np.ndarray) -> np.ndarray:
    """d^2/dtheta^2 along axis 1 via rfft."""
    m = values.shape[1]
    hat = np.fft.rfft(values, axis=1)
    k = theta_modes(m)
    hat *= -(k.astype(float) ** 2)
    return np.fft.irfft(hat, n=m, axis=1)


# ---------------------------------------------------------------------------
# radial differentiation on EdgeGrid (index-space mapping, second order)
# ---------------------------------------------------------------------------

def _index_map_derivatives(grid: EdgeGrid) -> Tuple[np.ndarray, np.ndarray]:
    """dr/dxi and d2r/dxi2: exact for the standard grading laws, second-order
    finite differences of the node map for any other smooth grading."""
    r = grid.r_nodes
    n = r.size
    k = np.arange(1, n + 1, dtype=float)
    if grid.grading_ratio == 1.0:
        h = r[-1] / n
        if np.allclose(r, r[-1] * k / n, rtol=1e-12, atol=0.0):
            return np.full_like(r, h), np.zeros_like(r)
    elif np.allclose(r, r[-1] * grid.grading_ratio ** (k - n), rtol=1e-12, atol=0.0):
        lr = math.log(grid.grading_ratio)
        return r * lr, r * lr * lr
    r_xi = np.gradient(r, edge_order=2)
    r_xixi = np.gradient(r_xi, edge_order=2)
    return r_xi, r_xixi


def radial_derivative_matrices(grid: EdgeGrid) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse first and second r-derivative matrices (one-sided at the ends)."""
    n = grid.n_r
    if n < 4:
        raise StencilUnderflowError(f"radial stencils need at least 4 nodes, got {n}")
    d1 = sp.lil_matrix((n, n))
    d2 = sp.lil_matrix((n, n))
    d1[0, [0, 1, 2]] = [-1.5, 2.0, -0.5]
    d1[n - 1, [n - 3, n - 2, n - 1]] = [0.5, -2.0, 1.5]
    d2[0, [0, 1, 2, 3]] = [2.0, -5.0, 4.0, -1.0]
    d2[n - 1, [n - 4, n - 3, n - 2, n - 1]] = [-1.0, 4.0, -5.0, 2.0]
    for k in range(1, n - 1):
        d1[k, [k - 1, k + 1]] = [-0.5, 0.5]
        d2[k, [k - 1, k, k + 1]] = [1.0, -2.0, 1.0]
    r_xi, r_xixi = _index_map_derivatives(grid)
    D1 = sp.diags(1.0 / r_xi) @ d1.tocsr()
    D2 = sp.diags(1.0 / r_xi**2) @ (d2.tocsr() - sp.diags(r_xixi / r_xi) @ d1.tocsr())
    return D1.tocsr(), D2.tocsr()


# ---------------------------------------------------------------------------
# flux-form radial engine for surfaces of revolution g = dt^2 + f(t)^2 dtheta^2
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RevolutionDisc:
    """Cell-centered discretization of a surface of revolution.

    t holds node coordinates (radial arclength of the carrying metric),
    staggered away from both end faces.  End closures:

    * ``flux0``     -- zero flux through the end face.  This is the Friedrichs
      closure at a cone point or smooth pole (where the face profile vanishes
      anyway), the mirror closure on an equator plane, and a Neumann wall when
      the end face carries the last node.
    * ``regular``   -- match the decaying branch t^(a_scale*|m|) of the active
      Fourier mode through the end face (inner end only).
    * ``dirichlet`` -- the last node sits on the end face with value 0 and is
      eliminated from the system (outer end only).
    """

    t: np.ndarray
    faces: np.ndarray
    f_node: np.ndarray
    f_face: np.ndarray
    m_theta: int
    inner: str = "flux0"
    outer: str = "flux0"
    a_scale: float = 1.0

    def __post_init__(self):
        if self.faces.size != self.t.size + 1:
            raise InvalidParameterError("faces must have one more entry than nodes")
        if np.any(self.f_node <= 0.0):
            raise InvalidParameterError("profile must be positive at all nodes")
        if self.inner not in ("flux0", "regular"):
            raise InvalidParameterError(f"unknown inner closure {self.inner!r}")
        if self.outer not in ("flux0", "dirichlet"):
            raise InvalidParameterError(f"unknown outer closure {self.outer!r}")

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def n_active(self) -> int:
        return self.n - 1 if self.outer == "dirichlet" else self.n

    @property
    def cell_widths(self) -> np.ndarray:
        return np.diff(self.faces)

    @property
    def radial_weights(self) -> np.ndarray:
        """Cell masses of the carrying metric, int_cell f dt (midpoint profile)."""
        return self.f_node * self.cell_widths

    def quadrature_weights(self) -> np.ndarray:
        """2-D node weights for int . dA over the full (t, theta) grid."""
        return np.repeat(self.radial_weights[:, None], self.m_theta, axis=1) * (
            TWO_PI / self.m_theta)

    # -- banded mode operators -------------------------------------------------

    def mode_operator(self, m: int, diag: Optional[np.ndarray] = None
                      ) -> Tuple[np.ndarray, np.ndarray]:
        """Symmetric tridiagonal A with A u ~ w * ((1/f)(f u')' - m^2 u/f^2 + diag u).

        Returns (bands, w) over the active nodes, bands in solve_banded layout
        (bands[0] upper, bands[1] main, bands[2] lower diagonal).
        """
        na = self.n_active
        t, fc = self.t, self.f_face
        w = self.radial_weights
        diag_full = np.zeros(self.n) if diag is None else np.asarray(diag, dtype=float)

        main = np.zeros(na)
        upper = np.zeros(na)
        lower = np.zeros(na)

        # conductances of internal faces 1..n-1 (face i sits between nodes i-1, i)
        cond = fc[1:-1] / np.diff(t)
        n_lastface = na - 1 if self.outer == "dirichlet" else na - 1
        for i in range(na):
            if i >= 1:
                main[i] -= cond[i - 1]
                lower[i - 1] = cond[i - 1]
            if i <= na - 2:
                main[i] -= cond[i]
                upper[i + 1] = cond[i]
        if self.outer == "dirichlet":
            # boundary value 0 at the last node; its face conductance drains row na-1
            main[na - 1] -= cond[na - 1]
        # inner closure
        if self.inner == "regular":
            a = self.a_scale * abs(m)
            t_end = self.faces[0]
            if a > 0.0 and t_end > 0.0 and self.f_face[0] > 0.0:
                main[0] -= self.f_face[0] * a * (t_end / t[0]) ** a / t_end
        main -= (m * m) * (self.cell_widths / self.f_node)[:na]
        main += (diag_full * w)[:na]

        bands = np.zeros((3, na))
        bands[0, 1:] = upper[1:]
        bands[1, :] = main
        bands[2, :-1] = lower[:-1]
        return bands, w[:na]

    def solve_mode(self, m: int, rhs: np.ndarray, diag: Optional[np.ndarray] = None,
                   zero_mean: bool = False) -> np.ndarray:
        """Solve (Delta_m + diag) u = rhs for one Fourier mode.

        zero_mean swaps in the generalized inverse: the defect direction
        (constants) is removed by a Lagrange border, so L u = rhs - proj.
        """
        na = self.n_active
        bands, w = self.mode_operator(m, diag)
        b = np.asarray(rhs, dtype=complex if np.iscomplexobj(rhs) else float)[:na] * w
        if zero_mean:
            A = _bands_to_sparse(bands)
            wn = w / float(np.max(w))   # scaled border for sane conditioning
            border = sp.bmat([[A, wn[:, None]], [wn[None, :], None]], format="csc")
            lu = spla.splu(border)

            def bordered_solve(rhs_vec):
                sol = lu.solve(rhs_vec)
                return sol + lu.solve(rhs_vec - border @ sol)  # refinement

            rhs_b = np.concatenate([b, [0.0 * b[0]]])
            if np.iscomplexobj(rhs_b):
                sol = bordered_solve(rhs_b.real) + 1j * bordered_solve(rhs_b.imag)
            else:
                sol = bordered_solve(rhs_b)
            u = sol[:na]
        else:
            try:
                u = solve_banded((1, 1), bands, b)
                # one refinement pass counters the strong row scaling of
                # deeply graded cells
                resid = b - _banded_matvec(bands, u)
                u = u + solve_banded((1, 1), bands, resid)
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(f"banded mode solve failed: {exc}") from exc
        if na < self.n:
            pad = np.zeros(self.n, dtype=u.dtype)
            pad[:na] = u
            return pad
        return u

    def mode_eigenpairs(self, m: int, mass: np.ndarray, k: int = 4
                        ) -> Tuple[np.ndarray, np.ndarray]:
        """Smallest eigenpairs of -(Delta_m) u = lambda * u wrt nodal mass.

        mass holds nodal cell masses of the weighting metric (layout of
        radial_weights).  Exact in theta; symmetric tridiagonal reduction.
        Vectors come back in the original (unscaled) coordinates, columns
        mass-normalized.
        """
        from scipy.linalg import eigh_tridiagonal

        na = self.n_active
        bands, _ = self.mode_operator(m)
        d = -bands[1]
        e = -bands[0, 1:]
        s = 1.0 / np.sqrt(np.asarray(mass, dtype=float)[:na])
        d_t = d * s * s
        e_t = e * s[:-1] * s[1:]
        k = min(k, na)
        vals, vecs = eigh_tridiagonal(d_t, e_t, select="i",
                                      select_range=(0, k - 1))
        return vals, s[:, None] * vecs

    def mode_eigenvalues(self, m: int, mass: np.ndarray, k: int = 4,
                         drop_constant: bool = False) -> np.ndarray:
        """Eigenvalues of mode_eigenpairs; optionally with the constant mode
        removed by eigenvector overlap (robust against mass-scaling rounding
        of the zero eigenvalue on closed surfaces)."""
        vals, vecs = self.mode_eigenpairs(m, mass, k)
        if not drop_constant:
            return vals
        na = self.n_active
        mm = np.asarray(mass, dtype=float)[:na]
        ones = np.ones(na) / math.sqrt(float(np.sum(mm)))
        keep = []
        for i in range(vals.size):
            overlap = abs(float(np.sum(vecs[:, i] * mm * ones)))
            if overlap < 0.5:
                keep.append(vals[i])
        return np.asarray(keep)

    def flux_divergence(self, radial_values: np.ndarray, inner_flux: float = 0.0,
                        outer_flux: float = 0.0) -> np.ndarray:
        """(1/(f delta)) [F_{k+1/2} - F_{k-1/2}] with prescribed end fluxes.

        End fluxes are the values of f u' on the end faces; prescribing them
        lets singular cone currents (e.g. of log Lambda near a pole) enter
        the discrete divergence exactly instead of being zeroed out.
        """
        t, fc = self.t, self.f_face
        flux = np.empty(self.n + 1)
        flux[1:-1] = fc[1:-1] * np.diff(radial_values) / np.diff(t)
        flux[0] = inner_flux
        flux[-1] = outer_flux
        return np.diff(flux) / self.radial_weights

    # -- operator application over the full grid --------------------------------

    def apply_lb(self, values: np.ndarray) -> np.ndarray:
        """Laplace-Beltrami of the carrying metric, spectrally in theta."""
        if self.outer == "dirichlet":
            raise InvalidParameterError("apply_lb expects a closed (flux0/flux0) disc")
        m_t = self.m_theta
        hat = np.fft.rfft(values, axis=1)
        out = np.empty_like(hat)
        w = self.radial_weights
        for m in theta_modes(m_t):
            bands, _ = self.mode_operator(int(m))
            out[:, m] = _banded_matvec(bands, hat[:, m]) / w
        return np.fft.irfft(out, n=m_t, axis=1)

    def lb_matrix_fd(self) -> sp.csr_matrix:
        """Sparse 2-D Laplace-Beltrami with 3-point periodic theta stencil.

        Fallback for states without rotational symmetry; theta accuracy is
        O(dtheta^2) rather than spectral.
        """
        n, m = self.n_active, self.m_theta
        bands, w = self.mode_operator(0)
        R = sp.diags(1.0 / w) @ _bands_to_sparse(bands)
        dth = TWO_PI / m
        T = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]).tolil()
        T[0, m - 1] += 1.0
        T[m - 1, 0] += 1.0
        T = (T.tocsr()) / dth**2
        inv_f2 = sp.diags(1.0 / self.f_node[:n] ** 2)
        return (sp.kron(R, sp.identity(m)) + sp.kron(inv_f2, T)).tocsr()


def _bands_to_sparse(bands: np.ndarray) -> sp.csr_matrix:
    n = bands.shape[1]
    return sp.diags([bands[2, :-1], bands[1], bands[0, 1:]], [-1, 0, 1]).tocsr()


def _banded_matvec(bands: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = bands[1] * u
    out[:-1] += bands[0, 1:] * u[1:]
    out[1:] += bands[2, :-1] * u[:-1]
    return out


# -- constructors --------------------------------------------------------------

def power_graded_half_sphere(n_half: int, p: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
    """Staggered nodes/faces for u in (0, pi/2] with power-law pole grading."""
    xi_faces = np.arange(n_half + 1) / n_half
    xi_nodes = (np.arange(n_half) + 0.5) / n_half
    return (math.pi / 2.0) * xi_nodes**p, (math.pi / 2.0) * xi_faces**p


def hybrid_graded_half_sphere(n_half: int, depth: float = 1e-6,
                              switch: float = 0.1
                              ) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes/faces for u in (0, pi/2]: geometric toward the pole, uniform top.

    Half the cells grade geometrically from depth*(pi/2) up to switch*(pi/2)
    (log-uniform, so refinement doubles the log-density available to
    expansion fits), the rest are uniform.  Faces start exactly at 0.
    """
    top = math.pi / 2.0
    n_geo = n_half // 2
    n_uni = n_half - n_geo
    u_lo = depth * top
    u_sw = switch * top
    geo_faces = u_lo * (u_sw / u_lo) ** (np.arange(n_geo) / (n_geo - 1.0)) \
        if n_geo > 1 else np.array([u_sw])
    uni_faces = np.linspace(u_sw, top, n_uni + 1)[1:]
    faces = np.concatenate([[0.0], geo_faces, uni_faces])
    nodes = np.empty(n_half)
    ratio = (u_sw / u_lo) ** (1.0 / (n_geo - 1.0)) if n_geo > 1 else 2.0
    nodes[0] = faces[1] / math.sqrt(ratio)
    nodes[1:n_geo] = np.sqrt(faces[1:n_geo] * faces[2:n_geo + 1])
    nodes[n_geo:] = 0.5 * (faces[n_geo:-1] + faces[n_geo + 1:])
    return nodes, faces


def mirrored_full_nodes(half_nodes: np.ndarray, half_faces: np.ndarray,
                        total: float) -> Tuple[np.ndarray, np.ndarray]:
    """Extend half-grid nodes/faces symmetrically about total/2."""
    nodes = np.concatenate([half_nodes, total - half_nodes[::-1]])
    faces = np.concatenate([half_faces, total - half_faces[-2::-1]])
    return nodes, faces


def revolution_disc_from_profile(f: Callable[[np.ndarray], np.ndarray],
                                 nodes: np.ndarray, faces: np.ndarray,
                                 m_theta: int, inner: str = "flux0",
                                 outer: str = "flux0", a_scale: float = 1.0
                                 ) -> RevolutionDisc:
    return RevolutionDisc(t=nodes, faces=faces,
                          f_node=np.asarray(f(nodes), dtype=float),
                          f_face=np.asarray(f(faces), dtype=float), m_theta=m_theta,
                          inner=inner, outer=outer, a_scale=a_scale)


def edge_grid_disc(grid: EdgeGrid, beta: float, outer: str = "dirichlet") -> RevolutionDisc:
    """Flat-cone disc g = dr^2 + beta^2 r^2 dtheta^2 over an EdgeGrid.

    With f = beta*r the flux form reproduces the model mode operator
    d_rr + r^-1 d_r - j^2/(beta^2 r^2); the 'regular' inner closure matches
    the decaying branch r^(j/beta) (a_scale = 1/beta).
    """
    r = grid.r_nodes
    faces = np.empty(r.size + 1)
    if grid.grading_ratio == 1.0:
        faces[1:-1] = 0.5 * (r[:-1] + r[1:])
        faces[0] = 0.5 * r[0]
    else:
        faces[1:-1] = np.sqrt(r[:-1] * r[1:])
        faces[0] = r[0] / math.sqrt(grid.grading_ratio)
    faces[-1] = grid.r_max
    return RevolutionDisc(t=r, faces=faces, f_node=beta * r, f_face=beta * faces,
                          m_theta=grid.m_theta, inner="regular", outer=outer,
                          a_scale=1.0 / beta)


# ---------------------------------------------------------------------------
# torus grid machinery
# ---------------------------------------------------------------------------

def torus_laplacian(grid: TorusGrid) -> sp.csr_matrix:
    """Periodic 5-point Laplacian on the unit square torus."""
    n = grid.n
    T = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tolil()
    T[0, n - 1] += 1.0
    T[n - 1, 0] += 1.0
    T = T.tocsr() / grid.h**2
    eye = sp.identity(n)
    return (sp.kron(T, eye) + sp.kron(eye, T)).tocsr()


def torus_laplacian4(grid: TorusGrid) -> sp.csr_matrix:
    """Fourth-order periodic Laplacian (curvature estimation only)."""
    n = grid.n
    T = sp.lil_matrix((n, n))
    stencil = {-2: -1.0 / 12.0, -1: 4.0 / 3.0, 0: -5.0 / 2.0,
               1: 4.0 / 3.0, 2: -1.0 / 12.0}
    for i in range(n):
        for off, coef in stencil.items():
            T[i, (i + off) % n] += coef
    T = T.tocsr() / grid.h**2
    eye = sp.identity(n)
    return (sp.kron(T, eye) + sp.kron(eye, T)).tocsr()


# ---------------------------------------------------------------------------
# flat torus conic analytics (Jacobi theta function Green kernel)
# ---------------------------------------------------------------------------

_Q_NOME = math.exp(-math.pi)          # square torus, tau = i


def _theta1(v: np.ndarray) -> np.ndarray:
    """theta_1(v, q=e^-pi); the series reaches machine precision in 6 terms."""
    out = np.zeros_like(np.asarray(v, dtype=complex))
    for n in range(6):
        coeff = ((-1) ** n) * _Q_NOME ** ((n + 0.5) ** 2)
        out = out + 2.0 * coeff * np.sin((2 * n + 1) * v)
    return out


def _theta1_prime0() -> float:
    return float(sum(2.0 * ((-1) ** n) * (2 * n + 1) * _Q_NOME ** ((n + 0.5) ** 2)
                     for n in range(6)))


def _theta1_logderiv(v: np.ndarray) -> np.ndarray:
    """theta_1'/theta_1 (v) = cot v + 4 sum_n q^{2n}/(1-q^{2n}) sin 2nv."""
    out = 1.0 / np.tan(np.asarray(v, dtype=complex))
    for n in range(1, 12):
        q2n = _Q_NOME ** (2 * n)
        out = out + 4.0 * q2n / (1.0 - q2n) * np.sin(2 * n * v)
    return out


def _theta1_logderiv_prime(v: np.ndarray) -> np.ndarray:
    """d/dv of theta_1'/theta_1."""
    v = np.asarray(v, dtype=complex)
    out = -1.0 / np.sin(v) ** 2
    for n in range(1, 12):
        q2n = _Q_NOME ** (2 * n)
        out = out + 8.0 * n * q2n / (1.0 - q2n) * np.cos(2 * n * v)
    return out


class FlatTorusConicData:
    """Closed-form reference data on the unit square torus, cone point at 0.

    ell solves Delta ell = 4 pi (delta_0 - 1) with ell = 2 log|z| + O(|z|^2)
    near 0, and |s|_h^2 := e^ell.  The reference form
    omega_0 + i ddbar (c |s|_h^{2 beta}) then has conformal factor
    lambda0 = 1 + (c/2) e^{beta ell} (beta^2 |grad ell|^2 - 4 pi beta)
    against the flat metric, away from the cone point.
    """

    def __init__(self, beta: float, c: float):
        self.beta = float(beta)
        self.c = float(c)
        self._log_norm = -2.0 * math.log(math.pi * _theta1_prime0())

    @staticmethod
    def wrap(x, y):
        return x - np.round(x), y - np.round(y)

    def ell(self, x, y):
        xw, yw = self.wrap(np.asarray(x, float), np.asarray(y, float))
        v = math.pi * (xw + 1j * yw)
        return 2.0 * np.log(np.abs(_theta1(v))) - TWO_PI * yw**2 + self._log_norm

    def grad_ell(self, x, y):
        xw, yw = self.wrap(np.asarray(x, float), np.asarray(y, float))
        psi = math.pi * _theta1_logderiv(math.pi * (xw + 1j * yw))
        return 2.0 * np.real(psi), -2.0 * np.imag(psi) - 2.0 * TWO_PI * yw

    def grad_ell_sq(self, x, y):
        gx, gy = self.grad_ell(x, y)
        return gx * gx + gy * gy

    def hsq(self, x, y):
        """|s|_h^2 = e^ell (vanishes like |z|^2 at the cone point)."""
        return np.exp(self.ell(x, y))

    def smooth_weight(self, x, y):
        """H-factor e^{beta ell} / rho^{2 beta}; smooth and positive near 0."""
        xw, yw = self.wrap(np.asarray(x, float), np.asarray(y, float))
        rho2 = xw * xw + yw * yw
        return np.exp(self.beta * (self.ell(x, y) - np.log(rho2)))

    def lambda0(self, x, y):
        b, c = self.beta, self.c
        e = np.exp(b * self.ell(x, y))
        return 1.0 + 0.5 * c * e * (b * b * self.grad_ell_sq(x, y) - 2.0 * TWO_PI * b)

    def f_omega_raw(self, x, y, mu: float):
        """Twisted Ricci potential before the e-integral normalization shift."""
        b, c = self.beta, self.c
        ell = self.ell(x, y)
        lam_smooth = self.lambda0(x, y) * np.exp((1.0 - b) * ell)
        return -np.log(lam_smooth) - mu * c * np.exp(b * ell)

    # -- Wirtinger jets for the analytic curvature of the reference -----------

    def _ell_jet(self, x, y):
        """(ell, ell_z, ell_zz); ell_zzbar = -pi identically away from 0."""
        xw, yw = self.wrap(np.asarray(x, float), np.asarray(y, float))
        v = math.pi * (xw + 1j * yw)
        psi = _theta1_logderiv(v)
        ell = 2.0 * np.log(np.abs(_theta1(v))) - TWO_PI * yw**2 + self._log_norm
        ell_z = math.pi * psi + 1j * TWO_PI * yw
        ell_zz = math.pi**2 * _theta1_logderiv_prime(v) + math.pi
        return ell, ell_z, ell_zz

    def lap_log_lambda0(self, x, y):
        """Delta log(lambda0), evaluated analytically away from the cone point."""
        b, c = self.beta, self.c
        ell, lz, lzz = self._ell_jet(x, y)
        e = np.exp(b * ell)
        q = 4.0 * (lz * np.conj(lz)).real
        q_z = 4.0 * (lzz * np.conj(lz) - math.pi * lz)
        q_zzbar = 4.0 * ((lzz * np.conj(lzz)).real + math.pi**2)
        base = b * b * q - 2.0 * TWO_PI * b
        G = e * base
        G_z = e * (b * lz * base + b * b * q_z)
        G_zzbar = e * (
            b * b * lz * np.conj(lz) * base
            + b**3 * (np.conj(lz) * q_z + lz * np.conj(q_z))
            - math.pi * b * base
            + b * b * q_zzbar
        )
        lam = 1.0 + 0.5 * c * G
        lam_z = 0.5 * c * G_z
        lap_lam = 2.0 * c * G_zzbar.real
        grad_lam_sq = 4.0 * (lam_z * np.conj(lam_z)).real
        return (lap_lam * lam - grad_lam_sq) / lam**2

    def k_ref(self, x, y):
        """Gauss curvature of the reference metric lambda0 |dz|^2."""
        return -0.5 * self.lap_log_lambda0(x, y) / self.lambda0(x, y)

    def cell_mass(self, x0: float, x1: float, y0: float, y1: float) -> float:
        """int of lambda0 dx dy over the cell [x0,x1]x[y0,y1] near the corner.

        By Stokes, int_cell Delta(e^{beta ell}) equals the outward flux of
        grad(e^{beta ell}); edges with an endpoint at the cone point get a
        graded substitution to absorb the rho^(2 beta - 1) endpoint kink.
        """
        b, c = self.beta, self.c
        nodes, wts = np.polynomial.legendre.leggauss(48)
        s01 = 0.5 * (nodes + 1.0)
        w01 = 0.5 * wts

        def edge_flux(a0, a1, wall, horizontal, sign) -> float:
            length = a1 - a0
            graded = (abs(wall) < 1e-15) and (abs(a0) < 1e-15 or abs(a1) < 1e-15)
            if graded:
                if abs(a0) < 1e-15:
                    tpar, w = a0 + length * s01**2, w01 * 2.0 * s01 * length
                else:
                    tpar, w = a1 - length * s01**2, w01 * 2.0 * s01 * length
            else:
                tpar, w = a0 + length * s01, w01 * length
            if horizontal:
                xx, yy = tpar, np.full_like(tpar, wall)
                _, gy = self.grad_ell(xx, yy)
                gn = sign * gy
            else:
                xx, yy = np.full_like(tpar, wall), tpar
                gx, _ = self.grad_ell(xx, yy)
                gn = sign * gx
            e = np.exp(b * self.ell(xx, yy))
            return float(np.sum(w * b * e * gn))

        total = (edge_flux(y0, y1, x0, horizontal=False, sign=-1.0)
                 + edge_flux(y0, y1, x1, horizontal=False, sign=+1.0)
                 + edge_flux(x0, x1, y0, horizontal=True, sign=-1.0)
                 + edge_flux(x0, x1, y1, horizontal=True, sign=+1.0))
        return (x1 - x0) * (y1 - y0) + 0.5 * c * total


def torus_omega_weights(grid: TorusGrid, conic: FlatTorusConicData,
                        correction_ring: int = 3) -> np.ndarray:
    """Nodal cell masses of the reference area form Lambda0 dx dy.

    Midpoint masses everywhere except a small block of cells around the cone
    point, which get exact flux-corrected masses (the midpoint rule only sees
    the integrable rho^{2 beta - 2} spike there).
    """
    x, y = grid.mesh()
    w = conic.lambda0(x, y) * grid.h**2
    n, h = grid.n, grid.h
    for di in range(-correction_ring, correction_ring):
        for dj in range(-correction_ring, correction_ring):
            i, j = di % n, dj % n
            w[i, j] = conic.cell_mass(di * h, (di + 1) * h, dj * h, (dj + 1) * h)
    return w
