"""Nonlinear engine: Monge-Ampere residuals, Newton continuation, Ricci iteration.

The continuity path solves log(omega_phi/omega) = t f_omega + c_t - s phi for
(s, t) in A = (-inf, 0] x [0, 1] union [0, mu] x {1}.  Sphere-two-points
problems (equal angles) are reduced to an equator-mirrored half grid, which
removes the odd kernel direction of Delta_phi + mu at the endpoint and lets
rotationally symmetric states be solved per Fourier mode; the torus runs on
the full periodic grid with sparse LU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energy as energy_mod
from .errors import (
    ContinuationStallError,
    ConvergenceFailureError,
    DampingFailureError,
    EstimateViolationError,
    InvalidParameterError,
    LinearSolveFailureError,
    PositivityFailureError,
)
from .geometry import (
    ConformalRep,
    ConicSurfaceMetric,
    FlatTorusBackground,
    RoundSphereBackground,
)
from .grids import GENERAL, ROTATIONALLY_SYMMETRIC, EdgeGrid, ScalarField

__all__ = [
    "ContinuityState", "IterationState", "BarrierCheck", "MonitorReport",
    "ma_residual", "newton_step", "continuity_solve", "ricci_iterate",
    "estimate_monitor", "barrier_check", "default_schedule",
]

_DAMPING_FACTORS = 0.5 ** np.arange(9)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContinuityState:
    s: float
    t: float
    phi: ScalarField
    c_t: float
    residual_norm: float
    metric_phi: ConicSurfaceMetric
    diagnostics: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class IterationState:
    k: int
    tau: float
    psi_k: ScalarField
    phi_k: ScalarField
    energy_k: float


@dataclass(frozen=True)
class BarrierCheck:
    eps: float
    C: float
    argmax_location: Tuple[float, float]
    interior: bool


@dataclass(frozen=True)
class MonitorReport:
    s: float
    sup_phi: float
    c0_bound: Optional[float]
    c0_ok: bool
    sup_lap_phi: float
    laplacian_cap: float
    laplacian_ok: bool
    trace_constant: float
    positivity_ok: bool


# ---------------------------------------------------------------------------
# per-topology solve contexts
# ---------------------------------------------------------------------------

class _SphereContext:
    """Half-grid workspace for the equal-angle sphere problem."""

    kind = "sphere"

    def __init__(self, reference: ConicSurfaceMetric, f_vals: np.ndarray):
        rep = reference.representation
        self.bg: RoundSphereBackground = rep.background
        self.K = self.bg.n_r // 2
        self.disc = self.bg.half_disc
        self.lam0 = self.fold(rep.lam)
        self.f = self.fold(f_vals)
        self.w_corr = reference.quadrature_weights()[: self.K, :]
        self.V = 2.0 * float(np.sum(self.w_corr))
        self.w0_flux = self.disc.quadrature_weights()

    def fold(self, full: np.ndarray) -> np.ndarray:
        K = full.shape[0] // 2
        return 0.5 * (full[:K, :] + full[::-1, :][:K, :])

    def unfold(self, half: np.ndarray) -> np.ndarray:
        return np.concatenate([half, half[::-1, :]], axis=0)

    def lam_phi(self, phi: np.ndarray) -> np.ndarray:
        return self.lam0 + 0.5 * self.disc.apply_lb(phi)

    def residual_floor(self, phi: np.ndarray) -> float:
        """Rounding floor of the residual: flux differencing of O(|phi|)
        nodal values, divided by the omega cell masses."""
        bands, w = self.disc.mode_operator(0)
        row = np.abs(bands).sum(axis=0)
        scale = max(1.0, float(np.max(np.abs(phi))))
        lam = self.lam_phi(phi)
        return 8.0 * np.finfo(float).eps * scale * float(
            np.max(row / (w * np.min(lam, axis=1))))

    def residual(self, phi, s, t, c_t, f=None) -> np.ndarray:
        f = self.f if f is None else f
        lam = self.lam_phi(phi)
        if np.any(lam <= 0.0):
            idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
            raise PositivityFailureError(f"1 + Delta phi <= 0 at {idx}", node=idx)
        return np.log(lam / self.lam0) - t * f - c_t + s * phi

    def linear_solve(self, lam: np.ndarray, s: float, rhs: np.ndarray) -> np.ndarray:
        spread = float(np.max(np.ptp(lam, axis=1)))
        scale = float(np.max(np.abs(lam)))
        if spread <= 1e-11 * scale:
            lam_r = lam[:, 0]
            m_t = self.disc.m_theta
            hat = np.fft.rfft(rhs, axis=1)
            out = np.zeros_like(hat)
            scale = float(np.max(np.abs(hat))) or 1.0
            for m in range(m_t // 2 + 1):
                if float(np.max(np.abs(hat[:, m]))) <= 1e-14 * scale:
                    continue  # empty mode: skip (its block may sit at s = mu)
                zero_mean = (s == 0.0 and m == 0)
                out[:, m] = self.disc.solve_mode(
                    int(m), 2.0 * lam_r * hat[:, m], diag=2.0 * s * lam_r,
                    zero_mean=zero_mean)
            return np.fft.irfft(out, n=m_t, axis=1)
        A = self.disc.lb_matrix_fd() + sp.diags(2.0 * s * lam.reshape(-1))
        b = (2.0 * lam * rhs).reshape(-1)
        try:
            if s == 0.0:
                w = self.disc.quadrature_weights().reshape(-1)
                border = sp.bmat([[A, w[:, None]], [w[None, :], None]], format="csc")
                sol = spla.spsolve(border, np.concatenate([b, [0.0]]))
                return sol[:-1].reshape(rhs.shape)
            return spla.spsolve(A.tocsc(), b).reshape(rhs.shape)
        except Exception as exc:
            raise LinearSolveFailureError(str(exc)) from exc

    def integrate_corr(self, vals: np.ndarray) -> float:
        return 2.0 * float(np.sum(vals * self.w_corr))

    def lambda1(self, lam_half: np.ndarray, modes: int = 6) -> float:
        """Smallest nonzero eigenvalue of -Delta_{omega_phi} (half-LB convention)."""
        lam_full = self.unfold(lam_half)[:, 0]
        disc = self.bg.full_disc
        mass = lam_full * disc.radial_weights
        best = math.inf
        for m in range(modes):
            vals = disc.mode_eigenvalues(m, mass, k=3, drop_constant=(m == 0))
            if vals.size:
                best = min(best, float(vals[0]))
        return 0.5 * best


class _TorusContext:
    """Full periodic-grid workspace for the torus problem."""

    kind = "torus"

    def __init__(self, reference: ConicSurfaceMetric, f_vals: np.ndarray):
        rep = reference.representation
        self.bg: FlatTorusBackground = rep.background
        self.lap = self.bg.lap
        self.lam0 = rep.lam
        self.f = f_vals
        self.w_corr = reference.quadrature_weights()
        self.V = float(np.sum(self.w_corr))
        self.w0_flux = np.full(self.lam0.shape, self.bg.grid.h**2)

    def fold(self, vals: np.ndarray) -> np.ndarray:
        return vals.copy()

    def unfold(self, vals: np.ndarray) -> np.ndarray:
        return vals

    def lam_phi(self, phi: np.ndarray) -> np.ndarray:
        return self.lam0 + 0.5 * (self.lap @ phi.reshape(-1)).reshape(phi.shape)

    def residual_floor(self, phi: np.ndarray) -> float:
        scale = max(1.0, float(np.max(np.abs(phi))))
        lam_min = float(np.min(self.lam_phi(phi)))
        h2 = self.bg.grid.h**2
        return 8.0 * np.finfo(float).eps * scale * 8.0 / (h2 * max(lam_min, 1e-3))

    def residual(self, phi, s, t, c_t, f=None) -> np.ndarray:
        f = self.f if f is None else f
        lam = self.lam_phi(phi)
        if np.any(lam <= 0.0):
            idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
            raise PositivityFailureError(f"1 + Delta phi <= 0 at {idx}", node=idx)
        return np.log(lam / self.lam0) - t * f - c_t + s * phi

    def linear_solve(self, lam: np.ndarray, s: float, rhs: np.ndarray) -> np.ndarray:
        A = (self.lap + sp.diags(2.0 * s * lam.reshape(-1))).tocsc()
        b = (2.0 * lam * rhs).reshape(-1)
        try:
            if s == 0.0:
                w = np.full(b.size, self.bg.grid.h**2)
                border = sp.bmat([[A, w[:, None]], [w[None, :], None]], format="csc")
                sol = spla.spsolve(border, np.concatenate([b, [0.0]]))
                return sol[:-1].reshape(rhs.shape)
            return spla.splu(A).solve(b).reshape(rhs.shape)
        except RuntimeError as exc:
            raise LinearSolveFailureError(str(exc)) from exc

    def integrate_corr(self, vals: np.ndarray) -> float:
        return float(np.sum(vals * self.w_corr))

    def lambda1(self, lam_solve: np.ndarray, modes: int = 0) -> float:
        raise InvalidParameterError("lambda1 monitor not wired for torus paths")


def _make_context(reference: ConicSurfaceMetric, f_vals: np.ndarray):
    rep = reference.representation
    if not isinstance(rep, ConformalRep):
        raise InvalidParameterError("the solver needs a conformal reference metric")
    if isinstance(rep.background, RoundSphereBackground):
        return _SphereContext(reference, f_vals)
    if isinstance(rep.background, FlatTorusBackground):
        return _TorusContext(reference, f_vals)
    raise InvalidParameterError(
        "continuity solves support sphere-two-points and torus-one-point, "
        f"not {reference.topology!r}")


# ---------------------------------------------------------------------------
# residuals and Newton machinery
# ---------------------------------------------------------------------------

def _normalization_constant(reference: ConicSurfaceMetric, f_vals: np.ndarray,
                            t: float) -> float:
    """c_t with int e^(t f + c_t) dA = V; closed form of the monotone root."""
    w = reference.quadrature_weights()
    V = float(np.sum(w))
    return math.log(V / float(np.sum(np.exp(t * f_vals) * w)))


def ma_residual(phi: ScalarField, s: float, t: float,
                reference: ConicSurfaceMetric, f_omega: ScalarField) -> ScalarField:
    """log(omega_phi^n / omega^n) - t f_omega - c_t + s phi on the full grid."""
    ratio = 1.0 + reference.complex_laplacian_apply(phi.values)
    if np.any(ratio <= 0.0):
        idx = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
        raise PositivityFailureError(f"1 + Delta_omega phi <= 0 at {idx}", node=idx)
    c_t = _normalization_constant(reference, f_omega.values, t)
    vals = np.log(ratio) - t * f_omega.values - c_t + s * phi.values
    return phi.with_values(vals, symmetry=GENERAL)


def _phi_mean(ctx, res: np.ndarray, phi: np.ndarray) -> float:
    """Mean of res against dA_phi; the solvable component at s = 0 is its
    orthogonal complement (constants span the cokernel there)."""
    mass = ctx.lam_phi(phi) * ctx.w0_flux
    return float(np.sum(res * mass) / np.sum(mass))


def _newton_loop(ctx, phi: np.ndarray, s: float, t: float, c_t: float,
                 f_vals: Optional[np.ndarray], tol: float, max_iter: int
                 ) -> Tuple[np.ndarray, float, List[float]]:
    project = (s == 0.0)

    def projected_residual(p):
        res = ctx.residual(p, s, t, c_t, f_vals)
        if project:
            res = res - _phi_mean(ctx, res, p)
        return res

    res = projected_residual(phi)
    rn = float(np.max(np.abs(res)))
    history = [rn]
    for _ in range(max_iter):
        if rn < tol:
            return phi, rn, history
        lam = ctx.lam_phi(phi)
        delta = ctx.linear_solve(lam, s, -res)
        accepted = False
        for alpha in _DAMPING_FACTORS:
            trial = phi + alpha * delta
            try:
                res_trial = projected_residual(trial)
            except PositivityFailureError:
                continue
            rn_trial = float(np.max(np.abs(res_trial)))
            if rn_trial < rn or rn_trial < tol:
                phi, res, rn = trial, res_trial, rn_trial
                history.append(rn)
                accepted = True
                break
        if not accepted:
            floor = ctx.residual_floor(phi)
            if rn <= max(100.0 * tol, 10.0 * floor):
                # stagnation at the rounding floor of the damped solve; the
                # achieved residual is recorded honestly on the state
                return phi, rn, history
            raise DampingFailureError(
                f"no damping factor decreased the residual at (s, t) = ({s}, {t}); "
                f"rounding floor estimate {floor:.1e}")
    if rn < tol:
        return phi, rn, history
    raise ConvergenceFailureError(
        f"Newton hit the iteration cap at (s, t) = ({s}, {t}); residual {rn:.3e}")


def _state_grid(ctx, f_omega: ScalarField):
    return f_omega.grid


def _build_state(ctx, reference: ConicSurfaceMetric, f_omega: ScalarField,
                 phi_solve: np.ndarray, s: float, t: float, c_t: float, rn: float,
                 mu: Optional[float] = None, compute_lambda1: bool = False
                 ) -> ContinuityState:
    phi_full = ctx.unfold(phi_solve)
    lam_solve = ctx.lam_phi(phi_solve)
    ratio_full = ctx.unfold(lam_solve / ctx.lam0)
    metric_phi = reference.with_conformal_factor(
        reference.representation.lam * ratio_full)
    symmetry = GENERAL
    if isinstance(f_omega.grid, EdgeGrid):
        scale = max(1.0, float(np.max(np.abs(phi_full))))
        if float(np.max(np.ptp(phi_full, axis=1))) <= 1e-10 * scale:
            symmetry = ROTATIONALLY_SYMMETRIC
    phi_field = ScalarField(grid=f_omega.grid, values=phi_full, symmetry=symmetry)
    diag: Dict[str, float] = {
        "sup_phi": float(np.max(np.abs(phi_full))),
        "sup_lap_phi": float(np.max(np.abs(ratio_full - 1.0))),
    }
    if mu is not None:
        I, J = energy_mod.energy_I_J(reference, phi_field)
        diag["I"] = I
        diag["J"] = J
        diag["k_energy"] = energy_mod.k_energy_closed(reference, phi_field, mu, f_omega)
    if compute_lambda1 and s > 0.0:
        diag["lambda1"] = ctx.lambda1(lam_solve)
    return ContinuityState(s=s, t=t, phi=phi_field, c_t=c_t, residual_norm=rn,
                           metric_phi=metric_phi, diagnostics=diag)


def newton_step(state: ContinuityState, reference: ConicSurfaceMetric,
                f_omega: ScalarField) -> ContinuityState:
    """One damped Newton update of the given continuity state."""
    ctx = _make_context(reference, f_omega.values)
    phi = ctx.fold(state.phi.values)
    res = ctx.residual(phi, state.s, state.t, state.c_t)
    rn = float(np.max(np.abs(res)))
    floor = ctx.residual_floor(phi)
    if rn < max(1e-11, 5.0 * floor):
        return state
    lam = ctx.lam_phi(phi)
    delta = ctx.linear_solve(lam, state.s, -res)
    for alpha in _DAMPING_FACTORS:
        trial = phi + alpha * delta
        try:
            res_trial = ctx.residual(trial, state.s, state.t, state.c_t)
        except PositivityFailureError:
            continue
        rn_trial = float(np.max(np.abs(res_trial)))
        if rn_trial < rn:
            return _build_state(ctx, reference, f_omega, trial, state.s, state.t,
                                state.c_t, rn_trial)
    if rn <= max(1e-9, 100.0 * floor):
        return state
    raise DampingFailureError("no damping factor decreased the residual")


# ---------------------------------------------------------------------------
# continuity driver
# ---------------------------------------------------------------------------

def default_schedule(mu: float, f_sup: float, two_parameter: bool = False
                     ) -> List[Tuple[float, float]]:
    """Wu-style start, geometric approach, uniform finish at (mu, 1).

    The s-leg approaches 0 (for mu > 0) or mu itself (for mu <= 0) with ratio
    0.7, then marches in uniform steps of at most min(0.05, |mu|/20).
    """
    s0 = -max(10.0, 10.0 * f_sup)
    points: List[Tuple[float, float]] = []
    if two_parameter:
        points.append((s0, 0.0))
        for t in (0.25, 0.5, 0.75, 1.0):
            points.append((s0, t))
    else:
        points.append((s0, 1.0))
    anchor = 0.0 if mu > 0.0 else mu
    step_cap = min(0.05, abs(mu) / 20.0) if mu != 0.0 else 0.05
    s = s0
    while abs(s - anchor) > step_cap:
        s = anchor + 0.7 * (s - anchor)
        if abs(s - anchor) > step_cap:
            points.append((s, 1.0))
    points.append((anchor, 1.0))
    if mu > 0.0:
        n_up = max(1, int(math.ceil(mu / step_cap)))
        for k in range(1, n_up + 1):
            points.append((k * mu / n_up, 1.0))
    # drop consecutive duplicates
    out = [points[0]]
    for p in points[1:]:
        if abs(p[0] - out[-1][0]) > 1e-14 or abs(p[1] - out[-1][1]) > 1e-14:
            out.append(p)
    return out


def _validate_schedule(schedule: Sequence[Tuple[float, float]], mu: float,
                       beta: float, two_parameter: bool):
    for s, t in schedule:
        if not (0.0 <= t <= 1.0):
            raise InvalidParameterError(f"t = {t} outside [0, 1]")
        if s > 0.0 and t != 1.0:
            raise InvalidParameterError(f"(s, t) = ({s}, {t}) outside the A-set")
        if s > max(mu, 0.0) + 1e-12:
            raise InvalidParameterError(f"s = {s} beyond mu = {mu}")
        if t < 1.0 and not two_parameter:
            raise InvalidParameterError("t < 1 requires the two-parameter face")
    if two_parameter and beta > 0.5 + 1e-12:
        raise InvalidParameterError(
            "the two-parameter face is only exercised for beta <= 1/2")


def continuity_solve(reference: ConicSurfaceMetric, mu: float, beta=None,
                     schedule: Optional[Sequence[Tuple[float, float]]] = None,
                     *, tol: float = 1e-10, max_newton: int = 40,
                     two_parameter: bool = False, compute_lambda1: bool = True,
                     f_omega: Optional[ScalarField] = None,
                     max_bisections: int = 12) -> List[ContinuityState]:
    """March the continuity path to (mu, 1) and return the accepted states.

    Newton failures between schedule points trigger automatic bisection (cap
    12 per gap); the s < 0 uniform bound |phi| <= -2 |f|_inf / s is enforced
    on every accepted state.
    """
    if beta is not None:
        b = float(beta.beta) if hasattr(beta, "beta") else float(beta)
        if abs(b - reference.beta) > 1e-13:
            raise InvalidParameterError("beta disagrees with the reference metric")
    if f_omega is None:
        f_omega, _ = energy_mod.twisted_ricci_potential(reference, mu)
    ctx = _make_context(reference, f_omega.values)
    f_sup = f_omega.sup_norm()
    if schedule is None:
        schedule = default_schedule(mu, f_sup, two_parameter)
    _validate_schedule(schedule, mu, reference.beta, two_parameter)

    states: List[ContinuityState] = []
    s0, t0 = schedule[0]
    c_t = _normalization_constant(reference, f_omega.values, t0)
    if t0 == 0.0:
        phi = np.zeros_like(ctx.f)
        rn = float(np.max(np.abs(ctx.residual(phi, s0, t0, c_t))))
    else:
        phi = ctx.f / s0
        phi, rn, _ = _newton_loop(ctx, phi, s0, t0, c_t, None, tol, max_newton)
    states.append(_build_state(ctx, reference, f_omega, phi, s0, t0, c_t, rn,
                               mu=mu, compute_lambda1=compute_lambda1))
    _enforce_monitors(states[-1], f_sup)

    prev = (s0, t0)
    for target in schedule[1:]:
        phi, accepted = _bridge_gap(ctx, reference, f_omega, phi, prev, target,
                                    tol, max_newton, mu, compute_lambda1,
                                    max_bisections, f_sup,
                                    sup_prev=float(np.max(phi)))
        states.extend(accepted)
        prev = target
    return states


def _bridge_gap(ctx, reference, f_omega, phi, start, target, tol, max_newton,
                mu, compute_lambda1, max_bisections, f_sup, sup_prev):
    """Advance from start to target, bisecting the gap on Newton failure."""
    accepted: List[ContinuityState] = []
    stack = [target]
    current = start
    bisections = 0
    while stack:
        point = stack[-1]
        s, t = point
        c_t = _normalization_constant(reference, f_omega.values, t)
        sup_before = float(np.max(ctx.unfold(phi)))
        try:
            phi_new, rn, _ = _newton_loop(ctx, phi, s, t, c_t, None, tol, max_newton)
        except (DampingFailureError, ConvergenceFailureError,
                LinearSolveFailureError, PositivityFailureError) as exc:
            bisections += 1
            if bisections > max_bisections:
                raise ContinuationStallError(
                    f"no convergence between {current} and {point} after "
                    f"{max_bisections} bisections") from exc
            mid = (0.5 * (current[0] + point[0]), 0.5 * (current[1] + point[1]))
            stack.append(mid)
            continue
        if s == 0.0:
            # the zero-mean slice leaves the additive constant free; pin it by
            # continuity of sup phi along the path, and absorb the residual
            # quadrature-compatibility constant into c_t
            phi_new = phi_new + (sup_before - float(np.max(ctx.unfold(phi_new))))
            raw = ctx.residual(phi_new, s, t, c_t)
            shift = _phi_mean(ctx, raw, phi_new)
            c_t = c_t + shift
            rn = float(np.max(np.abs(raw - shift)))
        phi = phi_new
        stack.pop()
        state = _build_state(ctx, reference, f_omega, phi, s, t, c_t, rn,
                             mu=mu, compute_lambda1=compute_lambda1)
        _enforce_monitors(state, f_sup)
        accepted.append(state)
        current = point
    return phi, accepted


def _enforce_monitors(state: ContinuityState, f_sup: float):
    if state.s < 0.0:
        bound = -2.0 * f_sup / state.s
        if state.diagnostics["sup_phi"] > bound * (1.0 + 1e-9):
            raise EstimateViolationError(
                f"|phi| = {state.diagnostics['sup_phi']:.3e} exceeds the uniform "
                f"bound {bound:.3e} at s = {state.s}")


# ---------------------------------------------------------------------------
# Ricci iteration
# ---------------------------------------------------------------------------

def ricci_iterate(reference: ConicSurfaceMetric, mu: float, beta=None,
                  tau: float = 1.0, k_max: int = 60, *, tol: float = 1e-9,
                  newton_tol: float = 1e-11, max_newton: int = 40,
                  psi0: Optional[ScalarField] = None,
                  f_omega: Optional[ScalarField] = None) -> List[IterationState]:
    """Backward-discretized Kahler-Ricci flow omega_psi^n = omega^n
    e^{f - mu psi + phi_k / tau}.

    Each step is a continuity problem at s = mu - 1/tau with the reference
    data shifted by the previous potential; steps are warm-started and stop
    once the increment drops below tol in the sup norm.
    """
    if tau <= 0.0:
        raise InvalidParameterError("tau must be positive")
    if mu > 0.0 and tau <= 1.0 / mu:
        raise InvalidParameterError("for mu > 0 the iteration needs tau > 1/mu")
    if f_omega is None:
        f_omega, _ = energy_mod.twisted_ricci_potential(reference, mu)
    ctx = _make_context(reference, f_omega.values)
    s_eff = mu - 1.0 / tau
    psi = ctx.fold(psi0.values) if psi0 is not None else np.zeros_like(ctx.f)
    states: List[IterationState] = []
    for k in range(1, k_max + 1):
        f_shift = ctx.f - psi / tau
        try:
            psi_new, rn, _ = _newton_loop(ctx, psi.copy(), s_eff, 1.0, 0.0,
                                          f_shift, newton_tol, max_newton)
        except (DampingFailureError, ConvergenceFailureError,
                LinearSolveFailureError, PositivityFailureError):
            # cold starts at s_eff > 0 need their own continuity leg: the step
            # equation is exactly the one-parameter path with data f_shift
            psi_new, rn = _step_by_continuation(ctx, f_shift, s_eff,
                                                newton_tol, max_newton)
        inc = psi_new - psi
        psi = psi_new
        psi_full = ctx.unfold(psi)
        psi_field = ScalarField(grid=f_omega.grid, values=psi_full, symmetry=GENERAL)
        inc_field = ScalarField(grid=f_omega.grid, values=ctx.unfold(inc),
                                symmetry=GENERAL)
        energy_k = energy_mod.k_energy_closed(reference, psi_field, mu, f_omega)
        states.append(IterationState(k=k, tau=tau, psi_k=psi_field,
                                     phi_k=inc_field, energy_k=energy_k))
        # the additive constant of psi is a neutral direction at the marginal
        # time step tau = 2/mu (linearized multiplier -1/(tau mu - 1)), so the
        # stopping rule reads the metric content of the increment; the limit's
        # constant is pinned below from the stationary equation
        c_inc = ctx.integrate_corr(ctx.fold(inc_field.values)) / ctx.V
        if float(np.max(np.abs(inc - c_inc))) < tol:
            if mu != 0.0:
                ke_res = ctx.residual(psi, mu, 1.0, 0.0, ctx.f)
                c_fix = -ctx.integrate_corr(ke_res) / (ctx.V * mu)
                if abs(c_fix) > 1e-15:
                    states[-1] = _pin_constant(states[-1], c_fix)
            return states
    raise ConvergenceFailureError(
        f"Ricci iteration did not settle within {k_max} steps")


def _pin_constant(state: IterationState, c: float) -> IterationState:
    psi = state.psi_k.with_values(state.psi_k.values + c)
    phi = state.phi_k.with_values(state.phi_k.values + c)
    return IterationState(k=state.k, tau=state.tau, psi_k=psi, phi_k=phi,
                          energy_k=state.energy_k)


def _step_by_continuation(ctx, f_shift: np.ndarray, s_eff: float, tol: float,
                          max_newton: int, max_bisections: int = 12
                          ) -> Tuple[np.ndarray, float]:
    f_sup = float(np.max(np.abs(f_shift)))
    s0 = -max(10.0, 10.0 * f_sup)
    schedule = [s for s, _ in default_schedule(s_eff if s_eff != 0.0 else -1e-6,
                                               f_sup)]
    schedule = [min(s, s_eff) if s_eff > 0 else max(s, s_eff) for s in schedule]
    if schedule[-1] != s_eff:
        schedule.append(s_eff)
    phi = f_shift / s0
    phi, rn, _ = _newton_loop(ctx, phi, schedule[0], 1.0, 0.0, f_shift, tol,
                              max_newton)
    current = schedule[0]
    for target in schedule[1:]:
        if target == current:
            continue
        stack = [target]
        bisections = 0
        while stack:
            s = stack[-1]
            try:
                phi_new, rn, _ = _newton_loop(ctx, phi, s, 1.0, 0.0, f_shift,
                                              tol, max_newton)
            except (DampingFailureError, ConvergenceFailureError,
                    LinearSolveFailureError, PositivityFailureError) as exc:
                bisections += 1
                if bisections > max_bisections:
                    raise ContinuationStallError(
                        f"iteration step stalled between s = {current} and "
                        f"{s}") from exc
                stack.append(0.5 * (current + s))
                continue
            phi = phi_new
            stack.pop()
            current = s
    return phi, rn


# ---------------------------------------------------------------------------
# monitors and barriers
# ---------------------------------------------------------------------------

def estimate_monitor(state: ContinuityState, f_omega: ScalarField,
                     laplacian_cap: float = math.inf) -> MonitorReport:
    """A-priori-estimate report: C0 bound, Laplacian cap, trace two-sidedness."""
    sup_phi = state.diagnostics["sup_phi"]
    sup_lap = state.diagnostics["sup_lap_phi"]
    c0_bound = None
    c0_ok = True
    if state.s < 0.0:
        c0_bound = -2.0 * f_omega.sup_norm() / state.s
        c0_ok = sup_phi <= c0_bound * (1.0 + 1e-9)
    rep = state.metric_phi.representation
    ref_lam = rep.lam_ref
    ratio = rep.lam / ref_lam
    positivity_ok = bool(np.all(ratio > 0.0))
    trace_c = float(max(np.max(ratio), np.max(1.0 / ratio)))
    return MonitorReport(s=state.s, sup_phi=sup_phi, c0_bound=c0_bound, c0_ok=c0_ok,
                         sup_lap_phi=sup_lap, laplacian_cap=laplacian_cap,
                         laplacian_ok=sup_lap <= laplacian_cap,
                         trace_constant=trace_c, positivity_ok=positivity_ok)


def barrier_check(f: ScalarField, beta, gamma: float, eps: float, C: float
                  ) -> BarrierCheck:
    """Locate the argmax of f + C (r beta)^(eps/beta) over the grid.

    The barrier term forces the maximum off the edge whenever eps < beta *
    gamma for the declared Holder class of f.
    """
    b = float(beta.beta) if hasattr(beta, "beta") else float(beta)
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError("gamma must lie in (0, 1)")
    if not (0.0 < eps < b * gamma):
        raise InvalidParameterError("barrier exponent needs 0 < eps < beta * gamma")
    grid = f.grid
    if not isinstance(grid, EdgeGrid):
        raise InvalidParameterError("barrier scan expects a polar EdgeGrid field")
    rr, tt = grid.mesh()
    vals = f.values + C * (rr * b) ** (eps / b)
    idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    r_arg = float(rr[idx])
    theta_arg = float(tt[idx])
    interior = bool(r_arg > 5.0 * grid.r_min)
    return BarrierCheck(eps=eps, C=C, argmax_location=(r_arg, theta_arg),
                        interior=interior)
