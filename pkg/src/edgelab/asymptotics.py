"""Polyhomogeneous expansion fitting near cone points.

Fields are Fourier-analyzed in theta and fitted per mode against the ladder
r^(j + k/beta) (log r)^ell by weighted least squares over a radial window;
structure verdicts then test the absence/ordering statements for converged
solutions (constant leading term, no r^1 term, log-freeness below exponent
two, the theta-mode-one term sitting at exponent 1/beta, and the beta-regime
ladder ordering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IllConditionedBasisError, InvalidParameterError
from .grids import ConeAngle, EdgeGrid, ScalarField

__all__ = [
    "ExpansionFit", "StructureVerdicts", "fit_expansion", "verify_structure",
    "f_omega_expansion_check", "default_basis", "surface_polar_field",
]

LOG_DETECT_RELATIVE = 1e-6


@dataclass(frozen=True)
class ExpansionFit:
    """Fitted coefficients a_{j k ell} per theta mode.

    terms hold (j, k, ell, theta_mode, coefficient) with theta_mode >= 0 for
    cos(m theta) parts and theta_mode < 0 for sin(|m| theta) parts.
    residual_profile lists (band center radius, max abs fit residual).
    """

    terms: Tuple[Tuple[int, int, int, int, float], ...]
    residual_profile: Tuple[Tuple[float, float], ...]
    beta: float
    r_window: Tuple[float, float]
    u_scale: float
    mode1_exponent: Optional[float]
    merged_collision: bool

    def coefficient(self, j: int, k: int, ell: int = 0,
                    theta_mode: int = 0) -> float:
        for (jj, kk, ll, mm, coef) in self.terms:
            if (jj, kk, ll, mm) == (j, k, ell, theta_mode):
                return coef
        return 0.0

    def mode_coefficients(self, theta_mode: int) -> Dict[Tuple[int, int, int], float]:
        return {(j, k, ell): c for (j, k, ell, m, c) in self.terms if m == theta_mode}


def default_basis(beta: float, cutoff: float = 4.0) -> List[Tuple[int, int, int]]:
    """Candidate (j, k, ell) with j + k/beta <= cutoff; log columns below 2."""
    basis = []
    j_max = int(math.floor(cutoff)) + 1
    k_max = int(math.floor(cutoff * beta)) + 1
    for j in range(j_max + 1):
        for k in range(k_max + 1):
            e = j + k / beta
            if e <= cutoff + 1e-12:
                basis.append((j, k, 0))
                if e <= 2.0 + 1e-12 and e > 0.0:
                    basis.append((j, k, 1))
    return basis


def _collision_scan(basis: Sequence[Tuple[int, int, int]], beta: float
                    ) -> Tuple[List[Tuple[int, int, int]], bool]:
    """Drop colliding duplicates near beta = 1/2, error otherwise."""
    merged = False
    out: List[Tuple[int, int, int]] = []
    seen: List[Tuple[float, Tuple[int, int, int]]] = []
    for term in sorted(basis, key=lambda t: (t[0] + t[1] / beta, t[2])):
        e = term[0] + term[1] / beta
        clash = None
        exact = False
        for e0, t0 in seen:
            if t0[2] == term[2] and abs(e - e0) < 1e-3 and t0[:2] != term[:2]:
                clash = (t0, term)
                exact = abs(e - e0) < 1e-12
                break
        if clash is None:
            out.append(term)
            seen.append((e, term))
            continue
        if abs(beta - 0.5) < 1e-3 and abs(e - 2.0) < 0.1:
            # r^2 and r^(1/beta) merge into one jointly-reported rung
            merged = True
            continue
        if exact:
            continue  # rational beta: the same monomial reached twice
        raise IllConditionedBasisError(
            f"candidate exponents collide: {clash[0]} vs {clash[1]}",
            colliding_pair=clash)
    return out, merged


def _forbidden_term(term: Tuple[int, int, int], m: int, beta: float) -> bool:
    """Rungs the structure theorem excludes (tested, never fitted jointly).

    Forbidden: any log rung at exponent <= 2, the r^1 rung, theta-dependent
    constants, and sub-2 rungs in the wrong theta mode (r^(1/beta) belongs to
    modes +-1; near beta = 1/2 the merged rung is admitted in mode 0 too).
    """
    j, k, ell = term
    e = j + k / beta
    if ell > 0 and e <= 2.0 + 1e-9:
        return True
    if (j, k) == (1, 0):
        return True
    if e <= 1e-9:
        return m != 0
    if e < 2.0 - 1e-9:
        on_conic = abs(e - 1.0 / beta) < 1e-9
        return not (on_conic and abs(m) == 1)
    if abs(e - 2.0) < 1e-9 and ell == 0:
        merged = abs(beta - 0.5) < 1e-3
        return not (m == 0 or (abs(m) == 1 and abs(e - 1.0 / beta) < 1e-3)
                    or (merged and abs(m) <= 2))
    return False


def _theta_amplitudes(vals: np.ndarray) -> Dict[int, np.ndarray]:
    """Signed-mode amplitudes: m >= 0 cos parts, m < 0 sin parts."""
    m_t = vals.shape[1]
    hat = np.fft.rfft(vals, axis=1)
    out: Dict[int, np.ndarray] = {0: hat[:, 0].real / m_t}
    for m in range(1, m_t // 2):
        out[m] = 2.0 * hat[:, m].real / m_t
        out[-m] = -2.0 * hat[:, m].imag / m_t
    out[m_t // 2] = hat[:, m_t // 2].real / m_t
    return out


def fit_expansion(u: ScalarField, beta, r_window: Tuple[float, float],
                  basis_spec: Optional[Sequence[Tuple[int, int, int]]] = None,
                  cutoff: float = 4.0, max_theta_mode: int = 2,
                  fit_mode1_exponent: bool = True) -> ExpansionFit:
    """Weighted least-squares fit of the polyhomogeneous ladder on a window.

    Row weights r^(-e_min) equalize the influence of dyadic bands (e_min the
    smallest candidate exponent); candidate exponents closer than 1e-3 raise
    ill-conditioned-basis unless they are the r^2 / r^(1/beta) pair at beta
    close to 1/2, which is merged and flagged.
    """
    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    grid = u.grid
    if not isinstance(grid, EdgeGrid):
        raise InvalidParameterError("expansion fitting needs an EdgeGrid field")
    r_lo, r_hi = r_window
    mask = (grid.r_nodes >= r_lo) & (grid.r_nodes <= r_hi)
    r = grid.r_nodes[mask]
    if r.size < 8:
        raise InvalidParameterError("radial window holds fewer than 8 nodes")
    basis = list(basis_spec) if basis_spec is not None else default_basis(b, cutoff)
    basis, merged = _collision_scan(basis, b)
    amps = _theta_amplitudes(u.values)
    scale = u.sup_norm() or 1.0

    terms: List[Tuple[int, int, int, int, float]] = []
    fitted: Dict[int, np.ndarray] = {}
    e_min = min(j + k / b for (j, k, _) in basis)
    row_w = r ** (-e_min)
    logr = np.log(r)
    columns = {term: r ** (term[0] + term[1] / b) * logr ** term[2]
               for term in basis}
    for m in sorted(amps, key=abs):
        if abs(m) > max_theta_mode:
            continue
        y = amps[m][mask]
        admissible = [t for t in basis if not _forbidden_term(t, m, b)]
        forbidden = [t for t in basis if _forbidden_term(t, m, b)]

        def joint_fit(terms_list):
            A = np.stack([columns[t] for t in terms_list], axis=1) * row_w[:, None]
            col_scale = np.linalg.norm(A, axis=0)
            col_scale[col_scale == 0.0] = 1.0
            coef, *_ = np.linalg.lstsq(A / col_scale, y * row_w, rcond=None)
            coef = coef / col_scale
            return coef, (A * col_scale / col_scale) @ coef  # fitted * row_w

        coef, fitted_w = joint_fit(admissible)
        # forbidden rungs: an all-in joint fit would split real ladder content
        # across nearly collinear columns and drown the absence verdicts in
        # conditioning noise, so each rung is tested by whether augmenting the
        # admissible basis with it alone shrinks the fit residual materially;
        # detected rungs are then refitted jointly (faithful coefficients),
        # undetected ones report their residual projection
        resid_w = y * row_w - fitted_w
        r_adm = float(np.linalg.norm(resid_w))
        detections: Dict[Tuple[int, int, int], float] = {}
        promoted = []
        for t in forbidden:
            col = columns[t] * row_w
            denom = float(np.dot(col, col))
            cval = float(np.dot(col, resid_w) / denom) if denom > 0 else 0.0
            detections[t] = cval
            if denom > 0 and r_adm > 0:
                _, fitted_aug = joint_fit(admissible + [t])
                # a genuine rung dominates the residual; mild reductions are
                # just a spare smooth column soaking up discretization noise
                if np.linalg.norm(y * row_w - fitted_aug) < 0.05 * r_adm:
                    promoted.append(t)
        if promoted:
            coef, fitted_w = joint_fit(admissible + promoted)
            for t, cval in zip(admissible + promoted, coef):
                detections.pop(t, None)
                terms.append((*t, m, float(cval)))
        else:
            for t, cval in zip(admissible, coef):
                terms.append((*t, m, float(cval)))
        for t, cval in detections.items():
            terms.append((*t, m, cval))
        fitted[m] = fitted_w / row_w

    # residual per dyadic band over the window
    residual = np.zeros_like(r)
    for m, fit_vals in fitted.items():
        residual = np.maximum(residual, np.abs(amps[m][mask] - fit_vals))
    bands: List[Tuple[float, float]] = []
    lo = r_lo
    while lo < r_hi * (1.0 - 1e-12):
        hi = min(2.0 * lo, r_hi)
        sel = (r >= lo) & (r <= hi)
        if np.any(sel):
            bands.append((float(np.sqrt(lo * hi)), float(np.max(residual[sel]))))
        lo = hi
    mode1_exp = None
    if fit_mode1_exponent:
        mode1_exp = _fit_single_exponent(r, amps, mask, scale, cutoff)

    return ExpansionFit(terms=tuple(terms), residual_profile=tuple(bands), beta=b,
                        r_window=(float(r_lo), float(r_hi)), u_scale=scale,
                        mode1_exponent=mode1_exp, merged_collision=merged)


def _fit_single_exponent(r, amps, mask, scale, cutoff) -> Optional[float]:
    """Free-exponent fit of the leading theta-mode-1 content."""
    from scipy.optimize import minimize_scalar

    best = None
    for m in (1, -1):
        if m not in amps:
            continue
        y = amps[m][mask]
        if np.max(np.abs(y)) < 1e-12 * scale:
            continue

        def misfit(e):
            col = r**e
            c = float(np.dot(col, y) / np.dot(col, col))
            return float(np.sum((y - c * col) ** 2))

        res = minimize_scalar(misfit, bounds=(0.05, cutoff + 1.0), method="bounded",
                              options={"xatol": 1e-6})
        if best is None or res.fun < best[1]:
            best = (float(res.x), float(res.fun))
    return best[0] if best else None


# ---------------------------------------------------------------------------
# structure verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureVerdicts:
    a00_theta_independent: bool
    a10_absent: bool
    log_free_below_two: bool
    mode1_exponent_matches: bool
    ladder_ordering: bool
    details: Dict[str, float]

    @property
    def all_pass(self) -> bool:
        return (self.a00_theta_independent and self.a10_absent
                and self.log_free_below_two and self.mode1_exponent_matches
                and self.ladder_ordering)


def verify_structure(fit: ExpansionFit, beta, rel_tol: float = 1e-5) -> StructureVerdicts:
    """Check the leading-term structure of a fitted KE-type expansion."""
    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    scale = max(abs(fit.coefficient(0, 0)), fit.u_scale * 1e-3, 1e-300)

    # (a) a00 carries no theta dependence
    a00_offmode = max((abs(c) for (j, k, ell, m, c) in fit.terms
                       if (j, k, ell) == (0, 0, 0) and m != 0), default=0.0)
    verdict_a = a00_offmode < rel_tol * scale

    # (b) a_{1 0 ell} vanish for every ell and mode
    a10 = max((abs(c) for (j, k, ell, m, c) in fit.terms if (j, k) == (1, 0)),
              default=0.0)
    verdict_b = a10 < rel_tol * scale

    # (c) no logs at exponents <= 2
    logc = max((abs(c) for (j, k, ell, m, c) in fit.terms
                if ell > 0 and j + k / b <= 2.0 + 1e-9), default=0.0)
    verdict_c = logc < LOG_DETECT_RELATIVE * max(fit.u_scale, 1e-300)

    # (d) the theta-mode-1 term sits at exponent 1/beta
    if fit.mode1_exponent is None:
        verdict_d = True
        mode1_dev = 0.0
    else:
        mode1_dev = abs(fit.mode1_exponent - 1.0 / b)
        verdict_d = mode1_dev < 1e-2

    # (e) ladder ordering: every significant rung at exponent <= 2 must be an
    # admissible one for the beta regime -- r^(1/beta) carried by theta-modes
    # +-1 and r^2 by mode 0 (merged at beta = 1/2, where the extra mode-2 r^4
    # rung is admitted); absence of a rung (symmetric solutions) is fine
    verdict_e = True
    for (j, k, ell, m, c) in fit.terms:
        e = j + k / b
        if ell != 0 or e <= 1e-9 or e > 2.0 + 1e-9 or abs(c) < rel_tol * scale:
            continue
        if abs(e - 2.0) < 1e-9 and (m == 0 or abs(b - 0.5) < 1e-3):
            continue
        if abs(e - 1.0 / b) < 1e-9 and abs(m) == 1:
            continue
        verdict_e = False

    return StructureVerdicts(
        a00_theta_independent=verdict_a, a10_absent=verdict_b,
        log_free_below_two=verdict_c, mode1_exponent_matches=verdict_d,
        ladder_ordering=verdict_e,
        details={"a00_offmode": a00_offmode, "a10": a10, "log_coeff": logc,
                 "mode1_exponent_dev": mode1_dev})


# ---------------------------------------------------------------------------
# twisted-Ricci-potential expansion check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FOmegaExpansionReport:
    bands: Tuple[Tuple[float, float], ...]
    slope: float
    first_omitted: float
    deep_band_relative: float
    conforming: bool


def f_omega_expansion_check(f_omega: ScalarField, beta,
                            r_window: Optional[Tuple[float, float]] = None,
                            slope_slack: float = 0.75) -> FOmegaExpansionReport:
    """Fit f_omega against its stated basis and check residual decay.

    Surface basis (n = 1): mode-0 exponents {0} + {2k + 2/beta - 2 : k >= 0}
    and mode-(+-1) exponents {1, 3}; the verdict requires the band residuals
    to decay at least like the first omitted order (log-log slope within
    slope_slack) or to sit at relative rounding level.
    """
    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    grid = f_omega.grid
    if not isinstance(grid, EdgeGrid):
        raise InvalidParameterError("expansion check needs an EdgeGrid field")
    if r_window is None:
        r_window = (max(grid.r_min * 4.0, grid.r_max * 1e-5), grid.r_max * 0.2)
    # k/beta bookkeeping: 2/beta - 2 = (2 - 2 beta)/beta is k = 2-2beta... not a
    # lattice point of j + k/beta in general, so supply explicit exponents
    exps_m0 = [0.0, 2.0, 2.0 / b - 2.0, 2.0 / b, 2.0 / b + 2.0]
    exps_m1 = [1.0, 3.0]
    first_omitted = min(4.0, 2.0 / b + 2.0 if b > 0.5 else 4.0)

    mask = (grid.r_nodes >= r_window[0]) & (grid.r_nodes <= r_window[1])
    r = grid.r_nodes[mask]
    amps = _theta_amplitudes(f_omega.values)
    residual = np.zeros_like(r)
    logr = np.log(r)
    for m, exps in [(0, exps_m0), (1, exps_m1), (-1, exps_m1)]:
        if m not in amps:
            continue
        cols = np.stack([r**e for e in sorted(set(round(e, 12) for e in exps))],
                        axis=1)
        y = amps[m][mask]
        w = r ** (-0.0)
        coef, *_ = np.linalg.lstsq(cols * w[:, None], y * w, rcond=None)
        residual = np.maximum(residual, np.abs(y - cols @ coef))
    bands: List[Tuple[float, float]] = []
    lo = r_window[0]
    while lo < r_window[1] * (1 - 1e-12):
        hi = min(4.0 * lo, r_window[1])
        sel = (r >= lo) & (r <= hi)
        if np.any(sel):
            bands.append((float(np.sqrt(lo * hi)), float(np.max(residual[sel]))))
        lo = hi
    scale = max(f_omega.sup_norm(), 1e-300)
    deep_rel = bands[0][1] / scale if bands else 0.0
    if len(bands) >= 2 and bands[0][1] > 1e-13 * scale:
        xs = np.log([c for c, _ in bands])
        ys = np.log([max(v, 1e-300) for _, v in bands])
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = float("inf")
    conforming = bool(deep_rel < 1e-10 or slope >= first_omitted - slope_slack)
    return FOmegaExpansionReport(bands=tuple(bands), slope=slope,
                                 first_omitted=first_omitted,
                                 deep_band_relative=float(deep_rel),
                                 conforming=conforming)


def surface_polar_field(phi: ScalarField, reference, r_hi: float = 0.25,
                        n_r: int = 96) -> ScalarField:
    """Polar-patch view of a surface field near the cone point (see holder)."""
    from .holder import polar_patch

    return polar_patch(phi, reference, r_hi=r_hi, n_r=n_r)
