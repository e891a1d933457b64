"""Twisted Ricci potential, Aubin I/J functionals, and the twisted K-energy.

Quadrature conventions: normalization integrals (which see the integrable
singular volume density) use the edge-corrected weights carried by the
metric; the energy functionals use the flux-consistent weights Lambda * w0,
under which the discrete integration-by-parts identity behind I = 2J is
exact.  Additive constants of the Ricci potential drop out of every energy
exactly, because the flux-form Laplacian has exact zero row sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .discretization import dtheta
from .errors import (
    GaussBonnetMismatchError,
    InvalidParameterError,
    PositivityFailureError,
)
from .geometry import (
    EULER_CHARACTERISTIC,
    ConformalRep,
    ConicSurfaceMetric,
    FlatTorusBackground,
    ProfileRep,
    RoundSphereBackground,
    as_beta,
)
from .grids import GENERAL, ROTATIONALLY_SYMMETRIC, ScalarField

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# flux-consistent context shared by the energy functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _FluxContext:
    w_omega: np.ndarray                     # flux-consistent dA_omega masses
    w_corr: np.ndarray                      # edge-corrected dA_omega masses
    delta_omega: Callable                   # phi -> Delta_omega phi
    wedge: Callable                         # phi -> int i dphi ^ dbar phi
    V: float


def _flux_context(metric: ConicSurfaceMetric) -> _FluxContext:
    rep = metric.representation
    if isinstance(rep, ProfileRep):
        disc = rep.disc
        w = disc.quadrature_weights()

        def wedge(phi):
            return 0.5 * _revolution_dirichlet(disc, phi)

        return _FluxContext(w_omega=w, w_corr=w,
                            delta_omega=lambda p: 0.5 * disc.apply_lb(p),
                            wedge=wedge, V=float(np.sum(w)))

    bg = rep.background
    if isinstance(bg, FlatTorusBackground):
        h2 = bg.grid.h**2
        w = rep.lam * h2

        def wedge(phi):
            dx = np.diff(phi, axis=0, append=phi[:1, :])
            dy = np.diff(phi, axis=1, append=phi[:, :1])
            return 0.5 * float(np.sum(dx * dx + dy * dy))

        return _FluxContext(
            w_omega=w, w_corr=metric.quadrature_weights(),
            delta_omega=lambda p: 0.5 * (bg.lap @ p.reshape(-1)).reshape(p.shape) / rep.lam,
            wedge=wedge, V=float(np.sum(w)))

    if isinstance(bg, RoundSphereBackground):
        disc = bg.full_disc
        w0 = disc.quadrature_weights()
        w = rep.lam * w0

        def wedge(phi):
            return 0.5 * _revolution_dirichlet(disc, phi)

        return _FluxContext(
            w_omega=w, w_corr=metric.quadrature_weights(),
            delta_omega=lambda p: 0.5 * disc.apply_lb(p) / rep.lam,
            wedge=wedge, V=float(np.sum(w)))

    # flat-cone disk: constant factor against the model disc
    disc = bg.disc
    w0 = disc.quadrature_weights()
    w = rep.lam * w0

    def wedge(phi):
        return 0.5 * _revolution_dirichlet(disc, phi)

    return _FluxContext(w_omega=w, w_corr=metric.quadrature_weights(),
                        delta_omega=lambda p: 0.5 * disc.apply_lb(p) / rep.lam,
                        wedge=wedge, V=float(np.sum(w)))


def _revolution_dirichlet(disc, phi: np.ndarray) -> float:
    """int |grad phi|^2 dA as face-difference sums (exact IBP dual of apply_lb)."""
    dth = TWO_PI / disc.m_theta
    cond = disc.f_face[1:-1] / np.diff(disc.t)
    dr = np.diff(phi, axis=0)
    radial = float(np.sum(cond[:, None] * dr * dr)) * dth
    dth_phi = dtheta(phi)
    angular = float(np.sum((dth_phi**2) * (disc.cell_widths / disc.f_node)[:, None])) * dth
    return radial + angular


def _ratio_field(metric: ConicSurfaceMetric, ctx: _FluxContext, phi: np.ndarray
                 ) -> np.ndarray:
    """omega_phi^n / omega^n = 1 + Delta_omega phi, with positivity enforced."""
    ratio = 1.0 + ctx.delta_omega(phi)
    if np.any(ratio <= 0.0):
        idx = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
        raise PositivityFailureError(
            f"1 + Delta_omega phi <= 0 at node {idx}", node=idx)
    return ratio


# ---------------------------------------------------------------------------
# twisted Ricci potential
# ---------------------------------------------------------------------------

def gauss_bonnet_defect(metric: ConicSurfaceMetric, mu: float) -> float:
    """mu*A + 2 pi sum(1 - beta_i) - 2 pi chi for the marked surface."""
    chi = EULER_CHARACTERISTIC.get(metric.topology)
    if chi is None:
        raise InvalidParameterError(
            f"Gauss-Bonnet bookkeeping undefined for topology {metric.topology!r}")
    deficit = sum(TWO_PI * (1.0 - b) for b in metric.betas)
    return mu * metric.area + deficit - TWO_PI * chi


def natural_mu(metric: ConicSurfaceMetric) -> float:
    """The mu forced by Gauss-Bonnet for the metric's topology and angles."""
    chi = EULER_CHARACTERISTIC.get(metric.topology)
    if chi is None:
        raise InvalidParameterError(
            f"no closed-surface mu for topology {metric.topology!r}")
    deficit = sum(TWO_PI * (1.0 - b) for b in metric.betas)
    return (TWO_PI * chi - deficit) / metric.area


def twisted_ricci_potential(reference: ConicSurfaceMetric, mu: float,
                            beta=None) -> Tuple[ScalarField, float]:
    """Solve Delta_omega f = K_omega - mu and normalize int e^f dA = V.

    The (1-beta)[D] current is carried by the conic reference structure; the
    returned check is the relative defect of the e-integral normalization
    against the discrete volume.
    """
    if beta is not None and abs(as_beta(beta) - reference.beta) > 1e-13:
        raise InvalidParameterError("beta disagrees with the reference metric")
    defect = gauss_bonnet_defect(reference, mu)
    if abs(defect) > 1e-8 * max(1.0, abs(mu) * reference.area):
        raise GaussBonnetMismatchError(
            f"(mu, beta, topology) violate Gauss-Bonnet by {defect:.3e}")

    rep = reference.representation
    ctx = _flux_context(reference)

    if isinstance(rep, ConformalRep) and rep.conic is not None:
        bg = rep.background
        x, y = bg.grid.mesh()
        f = rep.conic.f_omega_raw(x, y, mu)
        symmetry = GENERAL
    elif isinstance(rep, ConformalRep) and isinstance(rep.background,
                                                      RoundSphereBackground):
        f = _sphere_green_potential(reference, mu)
        symmetry = ROTATIONALLY_SYMMETRIC
    else:
        rhs = _curvature_minus_mu(reference, mu)
        f = _green_solve_mode0(reference, 2.0 * rhs)
        symmetry = ROTATIONALLY_SYMMETRIC

    w = ctx.w_corr
    V = float(np.sum(w))
    shift = math.log(V / float(np.sum(np.exp(f) * w)))
    f = f + shift
    check = abs(float(np.sum(np.exp(f) * w)) - V) / V
    grid = _field_grid(reference)
    return ScalarField(grid=grid, values=f, symmetry=symmetry), check


def _sphere_green_potential(metric: ConicSurfaceMetric, mu: float) -> np.ndarray:
    """Friedrichs Green solve of Delta_omega f = K - mu on a sphere reference.

    The right-hand side 2 Lambda (K - mu) = 2(K0 - mu Lambda) - Delta_0 log
    Lambda is assembled with the discrete flux divergence of log Lambda and
    the exact cone-current flux (2 beta - 2) on the pole faces, so the
    (1 - beta)[D] term enters the discretization exactly and the zero-mean
    solvability defect stays at smooth-quadrature level.
    """
    rep = metric.representation
    bg = rep.background
    disc = bg.full_disc
    beta = metric.beta
    lam_r = np.asarray(rep.lam_analytic(bg.u_full), dtype=float)
    loglam = np.log(lam_r)
    cone_flux = 2.0 * beta - 2.0
    div = disc.flux_divergence(loglam, inner_flux=cone_flux,
                               outer_flux=-cone_flux)
    rhs_r = 2.0 * (bg.K0 - mu * lam_r) - div
    u = disc.solve_mode(0, rhs_r, zero_mean=True)
    return np.repeat(np.real(u)[:, None], disc.m_theta, axis=1)


def _curvature_minus_mu(metric: ConicSurfaceMetric, mu: float) -> np.ndarray:
    rep = metric.representation
    if isinstance(rep, ProfileRep):
        if rep.f is None or rep.d2f is None:
            raise InvalidParameterError("profile reference needs analytic f, f''")
        t = rep.disc.t
        K = -rep.d2f(t) / rep.f(t)
        return np.repeat((K - mu)[:, None], rep.disc.m_theta, axis=1)
    if isinstance(rep.background, RoundSphereBackground) and rep.k_analytic is not None:
        K = np.asarray(rep.k_analytic(rep.background.u_full), dtype=float)
        return np.repeat((K - mu)[:, None], rep.background.m_theta, axis=1)
    raise InvalidParameterError(
        "twisted Ricci potential needs an analytic reference curvature")


def _green_solve_mode0(metric: ConicSurfaceMetric, rhs2d: np.ndarray) -> np.ndarray:
    """Friedrichs Green solve of Delta_LB(omega-carrier) f = rhs, zero mean.

    For conformal references the equation Delta_0 f = Lambda * rhs is solved
    against the background disc; rotational symmetry is assumed (our closed
    revolution references), so only the zero mode is active.
    """
    rep = metric.representation
    if isinstance(rep, ProfileRep):
        disc = rep.disc
        rhs_r = rhs2d[:, 0]
        u = disc.solve_mode(0, rhs_r, zero_mean=True)
    else:
        bg = rep.background
        if not isinstance(bg, RoundSphereBackground):
            raise InvalidParameterError("mode Green solve needs a revolution metric")
        disc = bg.full_disc
        rhs_r = (rep.lam[:, 0]) * rhs2d[:, 0]
        u = disc.solve_mode(0, rhs_r, zero_mean=True)
    return np.repeat(np.real(u)[:, None], disc.m_theta, axis=1)


def _field_grid(metric: ConicSurfaceMetric):
    rep = metric.representation
    if isinstance(rep, ConformalRep) and isinstance(rep.background, FlatTorusBackground):
        return rep.background.grid
    if isinstance(rep, ProfileRep) and rep.grid is not None:
        return rep.grid
    # revolution surfaces carry a synthetic polar grid view: radial nodes are
    # the arclength coordinates, theta uniform
    from .grids import EdgeGrid
    if isinstance(rep, ProfileRep):
        t, m = rep.disc.t, rep.disc.m_theta
    else:
        bg = rep.background
        if isinstance(bg, RoundSphereBackground):
            t, m = bg.s0 * bg.u_full, bg.m_theta
        else:
            return bg.grid
    theta = TWO_PI * np.arange(m) / m
    return EdgeGrid(r_nodes=t, theta_nodes=theta, grading_ratio=1.0 + 1e-12)


# ---------------------------------------------------------------------------
# Aubin functionals and the K-energy
# ---------------------------------------------------------------------------

def energy_I_J(reference: ConicSurfaceMetric, phi: ScalarField
               ) -> Tuple[float, float]:
    """Aubin functionals I, J of the potential phi (n = 1 wedge quadrature)."""
    ctx = _flux_context(reference)
    p = phi.values
    ratio = _ratio_field(reference, ctx, p)
    I = float(np.sum(p * (1.0 - ratio) * ctx.w_omega)) / ctx.V
    J = 0.5 * ctx.wedge(p) / ctx.V
    return I, J


def k_energy_closed(reference: ConicSurfaceMetric, phi: ScalarField, mu: float,
                    f_omega: ScalarField) -> float:
    """Tian-style closed formula for the twisted Mabuchi energy."""
    ctx = _flux_context(reference)
    p = phi.values
    ratio = _ratio_field(reference, ctx, p)
    I, J = energy_I_J(reference, phi)
    ent = float(np.sum(np.log(ratio) * ratio * ctx.w_omega)) / ctx.V
    twist = float(np.sum(f_omega.values * (1.0 - ratio) * ctx.w_omega)) / ctx.V
    return ent - mu * (I - J) + twist


def k_energy_path(reference: ConicSurfaceMetric, phi_path: Sequence[ScalarField],
                  mu: float, f_omega: ScalarField) -> float:
    """Path-integral definition of the twisted Mabuchi energy.

    phi_path is a uniform-in-t sequence from 0 to the endpoint; the t
    derivative is taken by second-order differences and the t integral by the
    trapezoid rule.
    """
    if len(phi_path) < 2:
        raise InvalidParameterError("path needs at least two potentials")
    ctx = _flux_context(reference)
    vals = [np.asarray(p.values, dtype=float) for p in phi_path]
    n = len(vals)
    dt = 1.0 / (n - 1)
    integrand = np.empty(n)
    for i, p in enumerate(vals):
        if i == 0:
            pdot = (-1.5 * vals[0] + 2.0 * vals[1] - 0.5 * vals[2]) / dt if n > 2 \
                else (vals[1] - vals[0]) / dt
        elif i == n - 1:
            pdot = (1.5 * vals[-1] - 2.0 * vals[-2] + 0.5 * vals[-3]) / dt if n > 2 \
                else (vals[-1] - vals[-2]) / dt
        else:
            pdot = (vals[i + 1] - vals[i - 1]) / (2.0 * dt)
        ratio = _ratio_field(reference, ctx, p)
        f_t = f_omega.values - mu * p - np.log(ratio)
        # e-integral reporting normalization; the Laplacian kills constants
        f_t = f_t + math.log(ctx.V / float(np.sum(np.exp(f_t) * ratio * ctx.w_omega)))
        # Delta_{phi_t} f dA_{phi_t} = (1/2) Delta_0 f dA_0: the conformal
        # factors cancel, leaving the reference-weighted quadrature
        lap_f = ctx.delta_omega(f_t)
        integrand[i] = -float(np.sum(pdot * lap_f * ctx.w_omega)) / ctx.V
    return float(np.trapezoid(integrand, dx=dt))


def linear_path(phi: ScalarField, n_nodes: int = 64) -> List[ScalarField]:
    """The default straight segment t -> t*phi with n_nodes trapezoid nodes."""
    ts = np.linspace(0.0, 1.0, n_nodes)
    return [phi.with_values(t * phi.values) for t in ts]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    I: float
    J: float
    IminusJ: float
    E0beta_closed: float
    E0beta_path: float
    V: float
    f_omega_norm: float

    def __post_init__(self):
        n = 1
        slack = 1e-8 * max(1.0, abs(self.I), abs(self.J))
        if not (self.J / n <= self.IminusJ + slack and
                self.IminusJ <= n * self.J + slack):
            raise InvalidParameterError("I, J violate the Aubin inequality chain")


def energy_report(reference: ConicSurfaceMetric, phi: ScalarField, mu: float,
                  f_omega: ScalarField, path_nodes: int = 64) -> EnergyReport:
    I, J = energy_I_J(reference, phi)
    closed = k_energy_closed(reference, phi, mu, f_omega)
    path = k_energy_path(reference, linear_path(phi, path_nodes), mu, f_omega)
    ctx = _flux_context(reference)
    return EnergyReport(I=I, J=J, IminusJ=I - J, E0beta_closed=closed,
                        E0beta_path=path, V=ctx.V,
                        f_omega_norm=f_omega.sup_norm())


@dataclass(frozen=True)
class MonotonicityReport:
    labels: Tuple
    energies: Tuple[float, ...]
    steps: Tuple[float, ...]
    violations: Tuple[int, ...]
    cocycle_defect: Optional[float]

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0


def monotonicity_report(states: Sequence, reference: Optional[ConicSurfaceMetric] = None,
                        f_omega: Optional[ScalarField] = None,
                        mu: Optional[float] = None,
                        slack: float = 1e-9) -> MonotonicityReport:
    """Per-step Delta E with violation flags; cocycle check for iterations.

    Continuity states are read through their energy diagnostics; iteration
    states carry energy_k.  When (reference, f_omega, mu) are supplied for an
    iteration run, the cocycle sum E(omega, omega_k) = sum of step energies is
    verified through the base-change identity for the twisted potential.
    """
    if len(states) < 2:
        raise InvalidParameterError("monotonicity needs at least two states")
    first = states[0]
    if hasattr(first, "energy_k"):
        energies = [float(s.energy_k) for s in states]
        labels = tuple(int(s.k) for s in states)
    else:
        energies = [float(s.diagnostics["k_energy"]) for s in states]
        labels = tuple((float(s.s), float(s.t)) for s in states)
    steps = tuple(energies[i + 1] - energies[i] for i in range(len(energies) - 1))
    violations = tuple(i for i, d in enumerate(steps) if d > slack)

    cocycle = None
    if (hasattr(first, "energy_k") and reference is not None and f_omega is not None
            and mu is not None and reference.is_conformal):
        ref_ctx = _flux_context(reference)
        base_metric = reference
        base_f = f_omega
        base_psi_vals = np.zeros_like(first.psi_k.values)
        total = 0.0
        for s in states:
            psi_vals = s.psi_k.values
            inc = s.psi_k.with_values(psi_vals - base_psi_vals)
            total += k_energy_closed(base_metric, inc, mu, base_f)
            # rebase to omega_psi: f shifts by -mu psi - log(omega_psi/omega)
            ratio = _ratio_field(reference, ref_ctx, psi_vals)
            base_metric = reference.with_conformal_factor(
                reference.representation.lam * ratio)
            new_f = f_omega.values - mu * psi_vals - np.log(ratio)
            w = base_metric.quadrature_weights()
            V = float(np.sum(w))
            new_f = new_f + math.log(V / float(np.sum(np.exp(new_f) * w)))
            base_f = ScalarField(grid=f_omega.grid, values=new_f, symmetry=GENERAL)
            base_psi_vals = psi_vals
        cocycle = abs(total - energies[-1])
    return MonotonicityReport(labels=labels, energies=tuple(energies), steps=steps,
                              violations=violations, cocycle_defect=cocycle)
