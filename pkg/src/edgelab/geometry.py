"""Conic-surface metrics: backgrounds, reference edge metrics, exact oracles.

A metric is stored either by its revolution profile f(r) (g = dr^2 + f^2
dtheta^2, exact for the football and flat-cone oracles) or by a conformal
factor against a smooth background (round sphere, flat torus) or the flat
model cone.  The conic structure of references enters through the global
potential c |s|_h^{2 beta}, whose conformal factor is known in closed form on
each background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .discretization import (
    FlatTorusConicData,
    RevolutionDisc,
    edge_grid_disc,
    hybrid_graded_half_sphere,
    mirrored_full_nodes,
    revolution_disc_from_profile,
    torus_laplacian,
    torus_omega_weights,
)
from .errors import InvalidParameterError, PositivityFailureError
from .grids import ConeAngle, EdgeGrid, TorusGrid, make_grid

TWO_PI = 2.0 * math.pi

SPHERE_TWO_POINTS = "sphere-two-points"
TORUS_ONE_POINT = "torus-one-point"
DISK_ONE_POINT = "disk-one-point"
TOPOLOGIES = (SPHERE_TWO_POINTS, TORUS_ONE_POINT, DISK_ONE_POINT)

EULER_CHARACTERISTIC = {SPHERE_TWO_POINTS: 2.0, TORUS_ONE_POINT: 0.0}


def as_beta(beta) -> float:
    return float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)


def singular_radius(rho, beta) -> np.ndarray:
    """Cylindrical coordinate r = rho^beta / beta of the singular chart."""
    b = as_beta(beta)
    return np.asarray(rho, dtype=float) ** b / b


# ---------------------------------------------------------------------------
# backgrounds
# ---------------------------------------------------------------------------

class RoundSphereBackground:
    """Round sphere of prescribed area, as a surface of revolution.

    g0 = s0^2 (du^2 + sin^2 u dtheta^2) with s0 = sqrt(area / 4 pi); the
    section of O(p_N + p_S) enters through |s|_h^2 = sin^2 u.  Discretized on
    a power-graded staggered u-grid mirrored about the equator, so the two
    cone points of an equal-angle configuration sit at the end faces.
    """

    kind = SPHERE_TWO_POINTS

    def __init__(self, area: float, n_r: int = 256, m_theta: int = 8,
                 grading_depth: float = 1e-6):
        if area <= 0.0:
            raise InvalidParameterError("sphere area must be positive")
        if n_r % 2 != 0:
            raise InvalidParameterError("sphere grids need an even radial count")
        self.area = float(area)
        self.s0 = math.sqrt(area / (4.0 * math.pi))
        self.K0 = 1.0 / self.s0**2
        self.grading_depth = float(grading_depth)
        self.n_r = int(n_r)
        self.m_theta = int(m_theta)
        u_half, u_faces_half = hybrid_graded_half_sphere(n_r // 2, grading_depth)
        self.u_half, self.u_faces_half = u_half, u_faces_half
        self.u_full, self.u_faces_full = mirrored_full_nodes(u_half, u_faces_half, math.pi)

        s0 = self.s0
        profile = lambda t: s0 * np.sin(t / s0)
        self.full_disc = revolution_disc_from_profile(
            profile, s0 * self.u_full, s0 * self.u_faces_full, m_theta)
        self.half_disc = revolution_disc_from_profile(
            profile, s0 * self.u_half, s0 * self.u_faces_half, m_theta)

    def complex_chart_rho(self, u) -> np.ndarray:
        """|w| of the stereographic chart centered at the u = 0 pole."""
        return np.tan(np.asarray(u, dtype=float) / 2.0)

    def conformal_factor_complex_chart(self, rho) -> np.ndarray:
        """g0 coefficient of |dw|^2 at |w| = rho."""
        rho = np.asarray(rho, dtype=float)
        return 4.0 * self.s0**2 / (1.0 + rho**2) ** 2


class FlatTorusBackground:
    """Unit square flat torus; cone point at the identified corner."""

    kind = TORUS_ONE_POINT
    area = 1.0
    K0 = 0.0

    def __init__(self, n: int = 256):
        self.grid = TorusGrid(n=n)
        self.lap = torus_laplacian(self.grid)

    def conformal_factor_complex_chart(self, rho) -> np.ndarray:
        return np.ones_like(np.asarray(rho, dtype=float))


class FlatConeBackground:
    """Flat model cone dr^2 + beta^2 r^2 dtheta^2 on a disk EdgeGrid."""

    kind = DISK_ONE_POINT

    def __init__(self, beta: float, grid: EdgeGrid):
        self.beta = float(beta)
        self.grid = grid
        self.area = math.pi * self.beta * grid.r_max**2
        self.K0 = 0.0
        self.disc = edge_grid_disc(grid, self.beta, outer="flux0")


Background = Union[RoundSphereBackground, FlatTorusBackground, FlatConeBackground]


# ---------------------------------------------------------------------------
# metric representations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProfileRep:
    """Surface of revolution stored by its profile f (dr^2 + f^2 dtheta^2)."""

    disc: RevolutionDisc
    f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d2f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grid: Optional[EdgeGrid] = None

    kind = "profile"


@dataclass(frozen=True, eq=False)
class ConformalRep:
    """Conformal factor Lambda against a smooth (or model-cone) background.

    ref_weights are the edge-corrected nodal masses of the *reference* area
    form lam_ref dA0; area forms of other factors scale by the smooth ratio
    lam/lam_ref, which keeps the singular-cell closure exact.
    """

    background: Background
    lam: np.ndarray
    lam_ref: np.ndarray
    ref_weights: np.ndarray
    lam_analytic: Optional[Callable] = None
    k_analytic: Optional[Callable] = None
    conic: Optional[FlatTorusConicData] = None

    kind = "conformal"


@dataclass(frozen=True, eq=False)
class ConicSurfaceMetric:
    """A metric on a marked surface, with its discretization attached."""

    topology: str
    cone_points: Tuple[Tuple[str, ConeAngle], ...]
    area: float
    representation: Union[ProfileRep, ConformalRep]

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise InvalidParameterError(f"unknown topology {self.topology!r}")
        if self.area <= 0.0:
            raise InvalidParameterError("metric area must be positive")

    # -- basic queries ----------------------------------------------------------

    @property
    def betas(self) -> Tuple[float, ...]:
        return tuple(float(a.beta) for _, a in self.cone_points)

    @property
    def beta(self) -> float:
        return self.betas[0]

    @property
    def is_conformal(self) -> bool:
        return self.representation.kind == "conformal"

    def grid_shape(self) -> Tuple[int, int]:
        rep = self.representation
        if rep.kind == "profile":
            return (rep.disc.n, rep.disc.m_theta)
        bg = rep.background
        if isinstance(bg, FlatTorusBackground):
            return bg.grid.shape
        if isinstance(bg, RoundSphereBackground):
            return (bg.n_r, bg.m_theta)
        return (bg.grid.n_r, bg.grid.m_theta)

    # -- analysis hooks ----------------------------------------------------------

    def quadrature_weights(self) -> np.ndarray:
        """Node weights for int . dA_omega over the metric's own grid."""
        rep = self.representation
        if rep.kind == "profile":
            return rep.disc.quadrature_weights()
        return rep.ref_weights * (rep.lam / rep.lam_ref)

    def discrete_area(self) -> float:
        return float(np.sum(self.quadrature_weights()))

    def complex_laplacian_apply(self, values: np.ndarray) -> np.ndarray:
        """Delta_omega u (complex convention, half the Laplace-Beltrami)."""
        rep = self.representation
        if rep.kind == "profile":
            return 0.5 * rep.disc.apply_lb(values)
        bg = rep.background
        if isinstance(bg, FlatTorusBackground):
            flat = (bg.lap @ values.reshape(-1)).reshape(values.shape)
            return 0.5 * flat / rep.lam
        if isinstance(bg, RoundSphereBackground):
            return 0.5 * bg.full_disc.apply_lb(values) / rep.lam
        return 0.5 * bg.disc.apply_lb(values) / rep.lam

    def profile_samples(self) -> Tuple[np.ndarray, np.ndarray]:
        """(arclength r_k, profile f_k) for revolution metrics.

        For conformal sphere metrics the arclength is accumulated by graded
        trapezoid of sqrt(Lambda) dt0 from the u = 0 pole, with the innermost
        cell integrated on the analytic factor when available.
        """
        rep = self.representation
        if rep.kind == "profile":
            return rep.disc.t.copy(), rep.disc.f_node.copy()
        bg = rep.background
        if not isinstance(bg, RoundSphereBackground):
            raise InvalidParameterError("profile_samples needs a revolution metric")
        lam_r = rep.lam[:, 0]
        disc = bg.full_disc
        sq = np.sqrt(lam_r)
        t = disc.t
        if rep.lam_analytic is not None:
            nodes, wts = np.polynomial.legendre.leggauss(32)
            s01 = 0.5 * (nodes + 1.0)
            # graded substitution t = t_edge * s^2 absorbs the u^(beta-1) spike
            t_edge = t[0]
            tt = t_edge * s01**2
            ww = wts * t_edge * s01
            r0 = float(np.sum(ww * np.sqrt(rep.lam_analytic(tt / bg.s0))))
        else:
            r0 = sq[0] * t[0]
        r = np.empty_like(t)
        r[0] = r0
        for k in range(1, t.size):
            r[k] = r[k - 1] + 0.5 * (sq[k - 1] + sq[k]) * (t[k] - t[k - 1])
        return r, sq * disc.f_node

    def with_conformal_factor(self, lam: np.ndarray) -> "ConicSurfaceMetric":
        rep = self.representation
        if rep.kind != "conformal":
            raise InvalidParameterError("with_conformal_factor needs a conformal metric")
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0.0):
            idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
            raise PositivityFailureError(
                f"conformal factor nonpositive at node {idx}", node=idx)
        # lam_analytic / k_analytic continue to describe the *reference* factor
        # lam_ref, which downstream curvature splits rely on
        new_rep = ConformalRep(background=rep.background, lam=lam,
                               lam_ref=rep.lam_ref, ref_weights=rep.ref_weights,
                               lam_analytic=rep.lam_analytic,
                               k_analytic=rep.k_analytic, conic=rep.conic)
        return ConicSurfaceMetric(topology=self.topology, cone_points=self.cone_points,
                                  area=self.area, representation=new_rep)


# ---------------------------------------------------------------------------
# reference construction
# ---------------------------------------------------------------------------

def _sphere_reference_symbolics(beta: float, c: float, area: float):
    """Closed-form conformal factor/curvature of omega_0 + i ddbar(c sin^{2b} u)."""
    import sympy as sy

    u = sy.symbols("u", positive=True)
    b, cc, A = sy.Float(beta), sy.Float(c), sy.Float(area)
    s, co = sy.sin(u), sy.cos(u)
    lam = 1 + (4 * sy.pi * b * cc / A) * (2 * b * s ** (2 * b - 2) * co**2 - s ** (2 * b))
    scale = 4 * sy.pi / A
    loglam = sy.log(lam)
    lap_log = scale * (sy.diff(loglam, u, 2) + (co / s) * sy.diff(loglam, u))
    kref = (scale - lap_log / 2) / lam

    def vectorized(fn):
        def call(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()
        return call

    return vectorized(sy.lambdify(u, lam, "numpy")), vectorized(sy.lambdify(u, kref, "numpy"))


def _sphere_ref_weights(bg: RoundSphereBackground, lam_fn) -> np.ndarray:
    """Edge-corrected nodal masses of lam dA0 on the full sphere grid."""
    disc = bg.full_disc
    w = np.asarray(lam_fn(bg.u_full), dtype=float)[:, None] * disc.quadrature_weights()
    nodes, wts = np.polynomial.legendre.leggauss(32)
    s01 = 0.5 * (nodes + 1.0)

    def cell_mass(t_lo, t_hi, graded_toward_lo):
        # integrate lam(u(t)) f0(t) dt; grade toward the pole end when asked
        if graded_toward_lo:
            tt = t_lo + (t_hi - t_lo) * s01**2
            ww = wts * (t_hi - t_lo) * s01
        else:
            tt = t_hi - (t_hi - t_lo) * s01**2
            ww = wts * (t_hi - t_lo) * s01
        uu = tt / bg.s0
        return float(np.sum(ww * lam_fn(uu) * bg.s0 * np.sin(uu)))

    faces = disc.faces
    m0 = cell_mass(faces[0], faces[1], graded_toward_lo=True)
    m1 = cell_mass(faces[-2], faces[-1], graded_toward_lo=False)
    dth = TWO_PI / bg.m_theta
    w[0, :] = m0 * dth
    w[-1, :] = m1 * dth
    return w


def build_reference_surface(background: Background,
                            cone_points: Sequence[Tuple[str, ConeAngle]],
                            beta, c: float) -> ConicSurfaceMetric:
    """Reference edge metric omega = omega_0 + i ddbar (c |s|_h^{2 beta}).

    Positivity of the resulting conformal factor is checked at every node; on
    failure the first offending node is reported so the caller can shrink c.
    """
    b = as_beta(beta)
    cone_points = tuple((loc, ang if isinstance(ang, ConeAngle) else ConeAngle(ang))
                        for loc, ang in cone_points)
    if c < 0.0:
        raise InvalidParameterError("c must be nonnegative")

    if isinstance(background, RoundSphereBackground):
        if len(cone_points) != 2 or any(abs(a.beta - b) > 1e-14 for _, a in cone_points):
            raise InvalidParameterError(
                "sphere-two-points references need two equal-angle cone points")
        lam_fn, kref_fn = _sphere_reference_symbolics(b, c, background.area)
        lam = np.asarray(lam_fn(background.u_full), dtype=float)
        _check_positive(lam)
        lam2d = np.repeat(lam[:, None], background.m_theta, axis=1)
        rep = ConformalRep(background=background, lam=lam2d, lam_ref=lam2d,
                           ref_weights=_sphere_ref_weights(background, lam_fn),
                           lam_analytic=lam_fn, k_analytic=kref_fn)
        return ConicSurfaceMetric(topology=SPHERE_TWO_POINTS, cone_points=cone_points,
                                  area=background.area, representation=rep)

    if isinstance(background, FlatTorusBackground):
        if len(cone_points) != 1:
            raise InvalidParameterError("torus-one-point references need one cone point")
        conic = FlatTorusConicData(beta=b, c=c)
        x, y = background.grid.mesh()
        lam = conic.lambda0(x, y)
        _check_positive(lam)
        rep = ConformalRep(background=background, lam=lam, lam_ref=lam,
                           ref_weights=torus_omega_weights(background.grid, conic),
                           lam_analytic=conic.lambda0, conic=conic)
        return ConicSurfaceMetric(topology=TORUS_ONE_POINT, cone_points=cone_points,
                                  area=background.area, representation=rep)

    if isinstance(background, FlatConeBackground):
        if len(cone_points) != 1:
            raise InvalidParameterError("disk references carry one cone point")
        # |s|^2 = rho^2 and rho^{2 beta} = (beta r)^2, so the factor is constant
        lam_const = 1.0 + 2.0 * c * b * b
        if lam_const <= 0.0:
            raise PositivityFailureError("disk reference factor nonpositive", node=(0, 0))
        shape = (background.grid.n_r, background.grid.m_theta)
        lam = np.full(shape, lam_const)
        rep = ConformalRep(background=background, lam=lam, lam_ref=lam,
                           ref_weights=lam_const * background.disc.quadrature_weights(),
                           lam_analytic=lambda rr: np.full_like(
                               np.asarray(rr, dtype=float), lam_const))
        return ConicSurfaceMetric(topology=DISK_ONE_POINT, cone_points=cone_points,
                                  area=background.area * lam_const, representation=rep)

    raise InvalidParameterError(f"unsupported background {background!r}")


def _check_positive(lam: np.ndarray):
    if np.any(lam <= 0.0):
        idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
        raise PositivityFailureError(
            f"reference conformal factor <= 0 at node index {idx} (shrink c)", node=idx)


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------

def football_metric(beta, n_r: int = 256, m_theta: int = 8,
                    grading_depth: float = 1e-6) -> ConicSurfaceMetric:
    """Constant-curvature-1 football: f(r) = beta sin r on (0, pi)."""
    b = as_beta(beta)
    angle = ConeAngle(b)
    if n_r % 2 != 0:
        raise InvalidParameterError("football grids need an even radial count")
    half_nodes, half_faces = hybrid_graded_half_sphere(n_r // 2, grading_depth)
    nodes, faces = mirrored_full_nodes(half_nodes, half_faces, math.pi)
    f = lambda r: b * np.sin(r)
    d2f = lambda r: -b * np.sin(r)
    disc = revolution_disc_from_profile(f, nodes, faces, m_theta)
    return ConicSurfaceMetric(
        topology=SPHERE_TWO_POINTS,
        cone_points=(("pole-0", angle), ("pole-pi", angle)),
        area=4.0 * math.pi * b,
        representation=ProfileRep(disc=disc, f=f, d2f=d2f),
    )


def flat_cone_metric(beta, R_max: float, n_r: int = 128, m_theta: int = 8,
                     grading_ratio: float = 1.15) -> ConicSurfaceMetric:
    """Flat cone g = dr^2 + beta^2 r^2 dtheta^2 on a disk of radius R_max."""
    b = as_beta(beta)
    grid = make_grid(R_max, n_r, m_theta, grading_ratio)
    disc = edge_grid_disc(grid, b, outer="flux0")
    f = lambda r: b * np.asarray(r, dtype=float)
    d2f = lambda r: np.zeros_like(np.asarray(r, dtype=float))
    return ConicSurfaceMetric(
        topology=DISK_ONE_POINT,
        cone_points=(("origin", ConeAngle(b)),),
        area=math.pi * b * R_max**2,
        representation=ProfileRep(disc=disc, f=f, d2f=d2f, grid=grid),
    )


# ---------------------------------------------------------------------------
# asymptotic-equivalence sampling (the edge-metric membership test)
# ---------------------------------------------------------------------------

def asymptotic_equivalence_ratios(metric: ConicSurfaceMetric,
                                  n_points: int = 8) -> np.ndarray:
    """Successive ratios of g_11bar * rho^{2-2 beta} along a theta ray.

    For a metric asymptotically equivalent to the model edge metric the
    sampled quantity tends to a positive limit as rho -> 0, so the ratios
    approach 1.
    """
    rep = metric.representation
    if rep.kind != "conformal" or rep.lam_analytic is None:
        raise InvalidParameterError("equivalence sampling needs an analytic reference")
    b = metric.beta
    bg = rep.background
    rho = 10.0 ** (-np.arange(2, 2 + n_points, dtype=float))
    if isinstance(bg, RoundSphereBackground):
        u = 2.0 * np.arctan(rho)
        g11 = rep.lam_analytic(u) * bg.conformal_factor_complex_chart(rho)
    elif isinstance(bg, FlatTorusBackground):
        g11 = rep.lam_analytic(rho, np.zeros_like(rho))
    else:
        rnode = singular_radius(rho, b)
        g11 = rep.lam_analytic(rnode) * (b * rnode / rho) ** 2
    sampled = g11 * rho ** (2.0 - 2.0 * b)
    return sampled[1:] / sampled[:-1]


def edge_profile_ratio(metric: ConicSurfaceMetric, rho: float,
                       n_quad: int = 64) -> float:
    """f(r)/r near the cone point: circumference/(2 pi) over arclength."""
    rep = metric.representation
    if rep.kind != "conformal" or rep.lam_analytic is None:
        raise InvalidParameterError("profile ratio needs an analytic reference")
    bg = rep.background
    b = metric.beta

    def sqrt_g(rr):
        rr = np.asarray(rr, dtype=float)
        if isinstance(bg, RoundSphereBackground):
            u = 2.0 * np.arctan(rr)
            return np.sqrt(rep.lam_analytic(u) * bg.conformal_factor_complex_chart(rr))
        return np.sqrt(rep.lam_analytic(rr, np.zeros_like(rr)))

    # arclength r(rho) = int_0^rho sqrt(g) ds; sigma = s^beta smooths the spike
    nodes, wts = np.polynomial.legendre.leggauss(n_quad)
    sig = 0.5 * (nodes + 1.0) * rho**b
    wsig = 0.5 * wts * rho**b
    s = sig ** (1.0 / b)
    ds_dsig = (1.0 / b) * sig ** (1.0 / b - 1.0)
    r_len = float(np.sum(wsig * sqrt_g(s) * ds_dsig))
    circ_over_2pi = float(rho * sqrt_g(rho))
    return circ_over_2pi / r_len


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def metric_manifest(metric: ConicSurfaceMetric) -> dict:
    rep = metric.representation
    manifest = {
        "topology": metric.topology,
        "betas": list(metric.betas),
        "area": metric.area,
        "representation": rep.kind,
    }
    if rep.kind == "profile":
        manifest["r_nodes"] = rep.disc.t.tolist()
        manifest["theta_count"] = rep.disc.m_theta
        return manifest
    bg = rep.background
    if isinstance(bg, FlatTorusBackground):
        manifest["torus_n"] = bg.grid.n
    elif isinstance(bg, RoundSphereBackground):
        manifest["r_nodes"] = (bg.s0 * bg.u_full).tolist()
        manifest["theta_count"] = bg.m_theta
    else:
        manifest["r_nodes"] = bg.grid.r_nodes.tolist()
        manifest["theta_count"] = bg.grid.m_theta
    return manifest


def metric_value_rows(metric: ConicSurfaceMetric) -> List[Tuple[float, float, float]]:
    """(r, theta, value) rows; torus nodes are reported in polar form."""
    rep = metric.representation
    rows: List[Tuple[float, float, float]] = []
    if rep.kind == "profile":
        disc = rep.disc
        for i, t in enumerate(disc.t):
            for j in range(disc.m_theta):
                rows.append((float(t), TWO_PI * j / disc.m_theta, float(disc.f_node[i])))
        return rows
    bg = rep.background
    if isinstance(bg, FlatTorusBackground):
        xw, yw = bg.grid.wrapped_offsets()
        rr = np.hypot(xw, yw)
        th = np.mod(np.arctan2(yw, xw), TWO_PI)
        for i in range(bg.grid.n):
            for j in range(bg.grid.n):
                rows.append((float(rr[i, j]), float(th[i, j]), float(rep.lam[i, j])))
        return rows
    if isinstance(bg, RoundSphereBackground):
        for i, t in enumerate(bg.s0 * bg.u_full):
            for j in range(bg.m_theta):
                rows.append((float(t), TWO_PI * j / bg.m_theta, float(rep.lam[i, j])))
        return rows
    grid = bg.grid
    for i, r in enumerate(grid.r_nodes):
        for j, th in enumerate(grid.theta_nodes):
            rows.append((float(r), float(th), float(rep.lam[i, j])))
    return rows
