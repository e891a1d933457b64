"""Linear analysis of the model edge Laplacian.

Indicial roots, the Donaldson operator families Q and Q*, per-Fourier-mode
Friedrichs Green solvers on the flat cone disk, Green-operator application,
Holder-Friedrichs domain probes, and lowest-eigenvalue computation for conic
surface metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (
    d2theta,
    dtheta,
    edge_grid_disc,
    radial_derivative_matrices,
    _bands_to_sparse,
)
from .errors import (
    ConvergenceFailureError,
    DomainError,
    InvalidParameterError,
    SingularSystemError,
    StencilUnderflowError,
)
from .geometry import (
    ConformalRep,
    ConicSurfaceMetric,
    FlatTorusBackground,
    ProfileRep,
    RoundSphereBackground,
)
from .grids import GENERAL, ROTATIONALLY_SYMMETRIC, ConeAngle, EdgeGrid, ScalarField, make_grid

__all__ = [
    "IndicialRoots", "ModeOperator", "QOperator", "FriedrichsProbeReport",
    "indicial_roots", "model_laplacian_apply", "apply_Q", "mode_green_solve",
    "green_apply", "friedrichs_domain_probe", "lowest_eigenvalue",
    "surface_q_family",
]


# ---------------------------------------------------------------------------
# indicial roots
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndicialRoots:
    roots: Tuple[float, ...]
    zero_is_double: bool
    beta: float


def indicial_roots(beta, j_max: int) -> IndicialRoots:
    """The indicial root set {±j/beta : 0 <= j <= j_max}, 0 a double root."""
    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    if j_max < 0:
        raise InvalidParameterError("j_max must be nonnegative")
    roots = sorted({j / b for j in range(j_max + 1)} | {-j / b for j in range(j_max + 1)})
    return IndicialRoots(roots=tuple(roots), zero_is_double=True, beta=b)


# ---------------------------------------------------------------------------
# model Laplacian and the Q family
# ---------------------------------------------------------------------------

def _require_edge_field(u: ScalarField) -> EdgeGrid:
    if not isinstance(u.grid, EdgeGrid):
        raise DomainError("model-cone operators act on EdgeGrid fields")
    if u.grid.n_r < 4:
        raise StencilUnderflowError("radial stencils need at least 4 nodes")
    return u.grid


def model_laplacian_apply(u: ScalarField, beta) -> ScalarField:
    """(d_rr + r^-1 d_r + (beta r)^-2 d_theta^2) u, second order in the mesh."""
    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    grid = _require_edge_field(u)
    D1, D2 = radial_derivative_matrices(grid)
    r = grid.r_nodes[:, None]
    vals = D2 @ u.values + (D1 @ u.values) / r + d2theta(u.values) / (b * r) ** 2
    return u.with_values(vals, symmetry=GENERAL)


_Q_IDS = ("dr", "r_inv_dtheta", "dtheta", "dr_dtheta", "P11")
_Q_STARRED_IDS = ("drr", "r_inv_dr", "r2_inv_dtheta2")


@dataclass(frozen=True)
class QOperator:
    """One member of the Donaldson family Q (or the refined family Q*).

    Surface-case ids: dr, r_inv_dtheta, dtheta, dr_dtheta, P11 and the
    starred extras drr, r_inv_dr, r2_inv_dtheta2.  The tangential (y)
    operators of the general edge family are vacuous for n = 1.
    """

    id: str
    starred: bool = False
    beta: Optional[ConeAngle] = None

    def __post_init__(self):
        if self.id not in _Q_IDS + _Q_STARRED_IDS:
            raise InvalidParameterError(f"unknown Q operator id {self.id!r}")
        if (self.id in _Q_STARRED_IDS) != self.starred:
            raise InvalidParameterError(
                f"operator {self.id!r} has inconsistent starred flag")
        if self.id == "P11" and self.beta is None:
            raise InvalidParameterError("P11 needs the cone angle")


def surface_q_family(beta, starred: bool = False) -> List[QOperator]:
    """The surface-case Q family; Q* members appended when starred."""
    b = beta if isinstance(beta, ConeAngle) else ConeAngle(float(beta))
    ops = [QOperator(id="dr"), QOperator(id="r_inv_dtheta"), QOperator(id="dtheta"),
           QOperator(id="dr_dtheta"), QOperator(id="P11", beta=b)]
    if starred:
        ops += [QOperator(id="drr", starred=True),
                QOperator(id="r_inv_dr", starred=True),
                QOperator(id="r2_inv_dtheta2", starred=True)]
    return ops


def apply_Q(q: QOperator, u: ScalarField) -> ScalarField:
    """Finite-difference application of the named operator."""
    grid = _require_edge_field(u)
    D1, D2 = radial_derivative_matrices(grid)
    r = grid.r_nodes[:, None]
    v = u.values
    if q.id == "dr":
        out = D1 @ v
    elif q.id == "r_inv_dtheta":
        out = dtheta(v) / r
    elif q.id == "dtheta":
        out = dtheta(v)
    elif q.id == "dr_dtheta":
        out = D1 @ dtheta(v)
    elif q.id == "P11":
        b = float(q.beta.beta)
        out = D2 @ v + (D1 @ v) / r + d2theta(v) / (b * r) ** 2
    elif q.id == "drr":
        out = D2 @ v
    elif q.id == "r_inv_dr":
        out = (D1 @ v) / r
    elif q.id == "r2_inv_dtheta2":
        out = d2theta(v) / r**2
    else:  # pragma: no cover
        raise InvalidParameterError(q.id)
    return u.with_values(out, symmetry=GENERAL)


# ---------------------------------------------------------------------------
# Friedrichs mode solves and the Green operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeOperator:
    """Radial mode operator d_rr + r^-1 d_r - j^2/(beta^2 r^2) - kappa."""

    j: int
    beta: ConeAngle
    kappa: float
    R_max: float
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.boundary not in ("dirichlet", "neumann"):
            raise InvalidParameterError(f"unknown boundary {self.boundary!r}")
        a = abs(self.j) / self.beta.beta
        # the indicial polynomial of the mode vanishes at +-a by construction
        if abs(a * a - self.j**2 / self.beta.beta**2) != 0.0:
            raise InvalidParameterError("indicial-exponent bookkeeping corrupted")

    @property
    def indicial_exponents(self) -> Tuple[float, float]:
        a = abs(self.j) / self.beta.beta
        return (-a, a)


def mode_green_solve(op: ModeOperator, f: np.ndarray,
                     grid: Optional[EdgeGrid] = None) -> np.ndarray:
    """Friedrichs solve of (d_rr + r^-1 d_r - j^2/(beta^2 r^2) - kappa) u = f.

    The inner closure kills the singular branch (zero radial flux for j = 0,
    decaying-branch matching for j != 0); the stated Dirichlet or Neumann
    condition is applied at r = R_max.  f is nodal on grid (a default
    geometric grid is built when omitted).
    """
    f = np.asarray(f)
    if grid is None:
        grid = make_grid(op.R_max, f.shape[0], 4, 1.15)
    if f.shape[0] != grid.n_r:
        raise InvalidParameterError("f length must match the radial grid")
    if abs(grid.r_max - op.R_max) > 1e-12 * op.R_max:
        raise InvalidParameterError("grid outer radius disagrees with R_max")
    if not np.all(np.isfinite(f)):
        raise InvalidParameterError("f must be finite")
    b = op.beta.beta
    outer = "dirichlet" if op.boundary == "dirichlet" else "flux0"
    disc = edge_grid_disc(grid, b, outer=outer)
    diag = np.full(grid.n_r, -op.kappa)
    zero_mean = (op.kappa == 0.0 and op.boundary == "neumann" and op.j == 0)
    if op.kappa < 0.0 or (op.kappa == 0.0 and op.boundary == "neumann" and op.j == 0
                          and not zero_mean):
        # (Delta_j - kappa) is singular when -kappa hits the discrete spectrum
        spectrum = disc.mode_eigenvalues(abs(op.j), disc.radial_weights,
                                         k=disc.n_active)
        dist = float(np.min(np.abs(op.kappa + spectrum)))
        # the scaled tridiagonal eigensolve is itself only ~1e-6 accurate
        # here, so refuse shifts inside that uncertainty band
        if dist <= 1e-5 * max(1.0, abs(op.kappa)):
            nearest = float(-spectrum[np.argmin(np.abs(op.kappa + spectrum))])
            raise SingularSystemError(
                f"kappa = {op.kappa} sits at a discrete eigenvalue",
                eigenvalue_estimate=nearest)
    try:
        u = disc.solve_mode(abs(op.j), f, diag=diag, zero_mean=zero_mean)
    except SingularSystemError as exc:
        raise SingularSystemError(
            str(exc), eigenvalue_estimate=_nearest_mode_eigenvalue(disc, op)) from exc
    if not np.all(np.isfinite(u)):
        raise SingularSystemError(
            "mode solve produced non-finite values",
            eigenvalue_estimate=_nearest_mode_eigenvalue(disc, op))
    return u


def _nearest_mode_eigenvalue(disc, op: ModeOperator) -> float:
    vals = disc.mode_eigenvalues(abs(op.j), disc.radial_weights, k=8)
    # (Delta_j - kappa) is singular when kappa = -lambda(-Delta_j)
    candidates = -vals
    return float(candidates[np.argmin(np.abs(candidates - op.kappa))])


def green_apply(f: ScalarField, beta, kappa: float, R_max: float,
                boundary: str = "dirichlet") -> ScalarField:
    """u = G f by exact Fourier analysis in theta and per-mode Friedrichs solves.

    With kappa = 0 and the Neumann closure the zero mode is solved by the
    generalized inverse, so L(Gf) = f - Pi f (constants projected out).
    """
    grid = _require_edge_field(f)
    b = ConeAngle(float(beta.beta) if isinstance(beta, ConeAngle) else float(beta))
    m_t = grid.m_theta
    hat = np.fft.rfft(f.values, axis=1)
    out = np.empty_like(hat)
    outer = "dirichlet" if boundary == "dirichlet" else "flux0"
    disc = edge_grid_disc(grid, b.beta, outer=outer)
    diag = np.full(grid.n_r, -kappa)
    for m in range(m_t // 2 + 1):
        zero_mean = (kappa == 0.0 and boundary == "neumann" and m == 0)
        out[:, m] = disc.solve_mode(m, hat[:, m], diag=diag, zero_mean=zero_mean)
    vals = np.fft.irfft(out, n=m_t, axis=1)
    symmetry = ROTATIONALLY_SYMMETRIC if f.is_rotationally_symmetric() else GENERAL
    return ScalarField(grid=grid, values=vals, symmetry=symmetry)


# ---------------------------------------------------------------------------
# Holder-Friedrichs domain probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FriedrichsProbeReport:
    gamma: float
    beta: float
    flavor: str
    r_inner_levels: Tuple[float, ...]
    ratios: Dict[str, Tuple[float, ...]]
    classification: Dict[str, str]
    starred_probed: bool

    def all_bounded(self, ids: Optional[Sequence[str]] = None) -> bool:
        ids = ids if ids is not None else list(self.classification)
        return all(self.classification[i] == "bounded" for i in ids)


def _trend_classification(values: Sequence[float], growth: float = 1.5) -> str:
    """Diverging when the ratio grows >= growth per level twice in a row."""
    for i in range(len(values) - 2):
        if (values[i] > 0.0 and values[i + 1] >= growth * values[i]
                and values[i + 2] >= growth * values[i + 1]):
            return "diverging"
    return "bounded"


def friedrichs_domain_probe(f_corpus: Sequence, beta, gamma: float,
                            kappa: float = 0.0, R_max: float = 1.0,
                            flavor: str = "edge", n_levels: int = 3,
                            base_depth: float = 1e-3, m_theta: int = 16,
                            grading_ratio: float = 1.12,
                            seed: int = 0) -> FriedrichsProbeReport:
    """Probe boundedness of Q_i o G across grids reaching deeper to the edge.

    The corpus entries are callables f(r, theta) (or ScalarFields, resampled
    by their own nodes).  For beta <= 1/2 the starred family Q* is probed as
    well.  Each refinement level divides the inner radius by 10; a seminorm
    ratio growing by >= 1.5x per level for two consecutive levels is
    classified as diverging.
    """
    from .holder import holder_seminorm_values  # local import; holder imports us

    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError("gamma must lie in (0, 1)")
    starred = b <= 0.5
    ops = surface_q_family(b, starred=starred)
    levels = [base_depth * 10.0 ** (-k) for k in range(n_levels)]
    ratios: Dict[str, List[float]] = {q.id: [] for q in ops}

    for depth in levels:
        n_r = int(math.ceil(math.log(R_max / depth) / math.log(grading_ratio)))
        grid = make_grid(R_max, n_r, m_theta, grading_ratio)
        rr, tt = grid.mesh()
        for q in ops:
            ratios[q.id].append(0.0)
        for f in f_corpus:
            if callable(f):
                fv = ScalarField(grid=grid, values=np.asarray(f(rr, tt), dtype=float)
                                 * np.ones_like(rr))
            else:
                fv = _resample_to(f, grid)
            u = green_apply(fv, b, kappa, R_max, boundary="dirichlet")
            fnorm = fv.sup_norm() + holder_seminorm_values(
                fv, gamma, flavor, seed=seed)[-1]
            for q in ops:
                qu = apply_Q(q, u)
                semi = holder_seminorm_values(qu, gamma, flavor, seed=seed)[-1]
                ratios[q.id][-1] = max(ratios[q.id][-1], semi / max(fnorm, 1e-300))

    classification = {qid: _trend_classification(vals)
                      for qid, vals in ratios.items()}
    return FriedrichsProbeReport(
        gamma=gamma, beta=b, flavor=flavor, r_inner_levels=tuple(levels),
        ratios={k: tuple(v) for k, v in ratios.items()},
        classification=classification, starred_probed=starred)


def _resample_to(f: ScalarField, grid: EdgeGrid) -> ScalarField:
    """Cubic log-radius resampling of a nodal field onto a deeper grid."""
    from scipy.interpolate import CubicSpline

    src = f.grid
    if not isinstance(src, EdgeGrid) or src.m_theta != grid.m_theta:
        raise InvalidParameterError("resampling needs matching theta grids")
    x_src = np.log(src.r_nodes)
    x_dst = np.clip(np.log(grid.r_nodes), x_src[0], x_src[-1])
    out = np.empty(grid.shape)
    for j in range(grid.m_theta):
        out[:, j] = CubicSpline(x_src, f.values[:, j])(x_dst)
    return ScalarField(grid=grid, values=out)


# ---------------------------------------------------------------------------
# lowest eigenvalue of -Delta_omega
# ---------------------------------------------------------------------------

def lowest_eigenvalue(metric: ConicSurfaceMetric, n_modes: int = 8,
                      tol: float = 1e-10, max_iter: int = 10_000
                      ) -> Tuple[float, ScalarField]:
    """Smallest nonzero eigenvalue of -Delta_omega (half-Laplace-Beltrami).

    Revolution metrics are solved per Fourier mode by symmetric tridiagonal
    reduction (exact in theta); the torus uses inverse iteration with the
    constants deflated by a zero-mean border.
    """
    rep = metric.representation
    if isinstance(rep, ProfileRep):
        disc = rep.disc
        mass = disc.radial_weights
        return _revolution_lowest(metric, disc, mass, n_modes)
    bg = rep.background
    if isinstance(bg, RoundSphereBackground):
        lam_r = rep.lam[:, 0]
        spread = float(np.max(np.ptp(rep.lam, axis=1)))
        if spread > 1e-10 * float(np.max(rep.lam)):
            raise InvalidParameterError(
                "per-mode eigensolve needs a rotationally symmetric factor")
        disc = bg.full_disc
        mass = lam_r * disc.radial_weights
        return _revolution_lowest(metric, disc, mass, n_modes)
    if isinstance(bg, FlatTorusBackground):
        return _torus_lowest(metric, tol, max_iter)
    raise InvalidParameterError(f"unsupported metric for eigensolve: {metric.topology}")


def _revolution_lowest(metric, disc, mass, n_modes) -> Tuple[float, ScalarField]:
    closed = disc.outer != "dirichlet"
    best = (math.inf, 0)
    for m in range(min(n_modes, disc.m_theta // 2) + 1):
        vals = disc.mode_eigenvalues(m, mass, k=3,
                                     drop_constant=(m == 0 and closed))
        if vals.size and vals[0] < best[0]:
            best = (float(vals[0]), m)
    lam_raw, m_best = best
    vals, vecs = disc.mode_eigenpairs(m_best, mass, k=3)
    idx = int(np.argmin(np.abs(vals - lam_raw)))
    vec = vecs[:, idx]
    na = disc.n_active
    if na < disc.n:
        vec = np.concatenate([vec, [0.0]])
    theta = 2.0 * math.pi * np.arange(disc.m_theta) / disc.m_theta
    field_vals = vec[:, None] * np.cos(m_best * theta)[None, :]
    from .energy import _field_grid
    grid = _field_grid(metric)
    sym = ROTATIONALLY_SYMMETRIC if m_best == 0 else GENERAL
    eigenfield = ScalarField(grid=grid, values=field_vals, symmetry=sym)
    return 0.5 * lam_raw, eigenfield


def _torus_lowest(metric, tol, max_iter) -> Tuple[float, ScalarField]:
    rep = metric.representation
    bg = rep.background
    n = bg.grid.n
    S = (-bg.lap * bg.grid.h**2).tocsr()          # stiffness, PSD
    mass = (metric.quadrature_weights()).reshape(-1)
    mvec = mass.copy()
    border = sp.bmat([[S, mvec[:, None]], [mvec[None, :], None]], format="csc")
    lu = spla.splu(border)
    x, y = bg.grid.mesh()
    v = np.cos(2.0 * math.pi * x) + np.sin(2.0 * math.pi * y)
    v = v.reshape(-1)
    v -= (mvec @ v) / np.sum(mvec)
    v /= math.sqrt(float(v @ (mass * v)))
    rho_old = math.inf
    for _ in range(max_iter):
        sol = lu.solve(np.concatenate([mass * v, [0.0]]))
        u = sol[:-1]
        u /= math.sqrt(float(u @ (mass * u)))
        rho = float(u @ (S @ u))
        if abs(rho - rho_old) <= tol * max(abs(rho), 1.0):
            v = u
            break
        rho_old, v = rho, u
    else:
        raise ConvergenceFailureError("inverse iteration hit the cap")
    lam = 0.5 * rho
    field = ScalarField(grid=bg.grid, values=v.reshape(bg.grid.shape))
    return lam, field
