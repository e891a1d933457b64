"""Discrete wedge/edge Holder seminorm estimators and domain-norm probes.

The two distances are the wedge distance d1 (incomplete model metric) and the
dilation-invariant edge distance d2 = d1/(r + r').  Seminorms are estimated
by a seeded pair sample biased toward the edge; divergence is diagnosed by
the same 1.5x-per-refinement trend rule as the Friedrichs probe, with
refinement meaning a shrinking inner cutoff on the sampled pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InadmissibleGammaError, InvalidParameterError
from .grids import ConeAngle, EdgeGrid, ScalarField

__all__ = [
    "HolderReport", "DomainSeminormReport", "holder_seminorm",
    "holder_seminorm_values", "domain_seminorm", "continuity_path_holder_monitor",
    "WEDGE", "EDGE",
]

WEDGE = "wedge"
EDGE = "edge"

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class HolderReport:
    gamma: float
    flavor: str
    seminorm_by_refinement: Tuple[float, ...]
    classification: str
    pair_sample_size: int
    seed: int

    @property
    def value(self) -> float:
        return self.seminorm_by_refinement[-1]


def _trend(values: Sequence[float], growth: float = 1.5) -> str:
    for i in range(len(values) - 2):
        if (values[i] > 0.0 and values[i + 1] >= growth * values[i]
                and values[i + 2] >= growth * values[i + 1]):
            return "diverging"
    return "bounded"


def _sample_pairs(grid: EdgeGrid, n_pairs: int, seed: int
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded pair sample: half within a common dyadic r-band, half uniform."""
    rng = np.random.default_rng(seed)
    n, m = grid.shape
    half = n_pairs // 2
    i_a = rng.integers(0, n, size=half)
    i_b = rng.integers(0, n, size=half)
    # same-band half: bands are dyadic in radius; nodes are log-distributed,
    # so a fixed index width approximates a fixed dyadic band
    n_bands = max(1, int(math.log2(max(grid.r_max / grid.r_min, 2.0))))
    width = max(2, n // n_bands)
    starts = rng.integers(0, max(1, n - width), size=n_pairs - half)
    j_a = starts + rng.integers(0, width, size=n_pairs - half)
    j_b = starts + rng.integers(0, width, size=n_pairs - half)
    ia = np.concatenate([i_a, j_a])
    ib = np.concatenate([i_b, j_b])
    ta = rng.integers(0, m, size=n_pairs)
    tb = rng.integers(0, m, size=n_pairs)
    return np.stack([ia, ta]), np.stack([ib, tb])


def holder_seminorm_values(u: ScalarField, gamma: float, flavor: str,
                           seed: int = 0, n_pairs: int = 100_000,
                           levels: Optional[Sequence[float]] = None
                           ) -> List[float]:
    """Seminorm estimates across shrinking inner cutoffs (deepest last).

    Pairs with min(r, r') below the cutoff are excluded at each level, so the
    estimates are monotone nondecreasing as the cutoff shrinks.
    """
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError("gamma must lie in (0, 1)")
    if flavor not in (WEDGE, EDGE):
        raise InvalidParameterError(f"unknown flavor {flavor!r}")
    grid = u.grid
    if not isinstance(grid, EdgeGrid):
        raise InvalidParameterError("Holder estimators act on EdgeGrid fields")
    pa, pb = _sample_pairs(grid, n_pairs, seed)
    r = grid.r_nodes
    ra, rb = r[pa[0]], r[pb[0]]
    th = grid.theta_nodes
    dth = np.abs(th[pa[1]] - th[pb[1]])
    dth = np.minimum(dth, TWO_PI - dth)
    d1 = np.hypot(ra - rb, (ra + rb) * dth)
    dist = d1 if flavor == WEDGE else d1 / (ra + rb)
    vals = u.values
    du = np.abs(vals[pa[0], pa[1]] - vals[pb[0], pb[1]])
    ok = (dist > 0.0) & (dist <= 1.0)
    quotient = np.zeros_like(dist)
    quotient[ok] = du[ok] / dist[ok] ** gamma
    rmin_pair = np.minimum(ra, rb)
    if levels is None:
        deepest = max(2.0 * grid.r_min, grid.r_max * 1e-12)
        n_lev = max(3, min(6, int(math.log10(grid.r_max / deepest))))
        levels = [grid.r_max * 10.0 ** (-(k + 1)) for k in range(n_lev)]
        levels = [max(lv, deepest) for lv in levels]
    out = []
    for cutoff in levels:
        mask = rmin_pair >= cutoff
        out.append(float(np.max(quotient[mask])) if np.any(mask) else 0.0)
    return out


def holder_seminorm(u: ScalarField, gamma: float, flavor: str, seed: int = 0,
                    n_pairs: int = 100_000,
                    levels: Optional[Sequence[float]] = None) -> HolderReport:
    """Estimate [u]_{d;0,gamma} and classify its inner-cutoff trend."""
    values = holder_seminorm_values(u, gamma, flavor, seed=seed, n_pairs=n_pairs,
                                    levels=levels)
    return HolderReport(gamma=gamma, flavor=flavor,
                        seminorm_by_refinement=tuple(values),
                        classification=_trend(values),
                        pair_sample_size=n_pairs, seed=seed)


@dataclass(frozen=True)
class DomainSeminormReport:
    gamma: float
    beta: float
    flavor: str
    starred: bool
    components: Dict[str, HolderReport]
    value: float

    def classification(self, op_id: str) -> str:
        return self.components[op_id].classification

    @property
    def finite(self) -> bool:
        return all(rep.classification == "bounded"
                   for rep in self.components.values())


def domain_seminorm(u: ScalarField, gamma: float, beta, flavor: str,
                    starred: bool = False, seed: int = 0,
                    n_pairs: int = 100_000) -> Tuple[float, DomainSeminormReport]:
    """||u|| + sum over Q of [Q_i u] in the requested Holder flavor.

    The starred family Q* is admitted only for beta <= 1/2 (domain probes);
    wedge flavor enforces gamma <= 1/beta - 1.
    """
    from .model_cone import apply_Q, surface_q_family

    b = float(beta.beta) if isinstance(beta, ConeAngle) else float(beta)
    if flavor == WEDGE and gamma > 1.0 / b - 1.0 + 1e-12:
        raise InadmissibleGammaError(
            f"wedge flavor needs gamma <= 1/beta - 1 = {1.0 / b - 1.0:.4f}")
    if starred and b > 0.5 + 1e-12:
        raise InvalidParameterError("the starred family is probed only for beta <= 1/2")
    components: Dict[str, HolderReport] = {}
    components["u"] = holder_seminorm(u, gamma, flavor, seed=seed, n_pairs=n_pairs)
    total = u.sup_norm() + components["u"].value
    for q in surface_q_family(b, starred=starred):
        qu = apply_Q(q, u)
        rep = holder_seminorm(qu, gamma, flavor, seed=seed, n_pairs=n_pairs)
        components[q.id] = rep
        total += rep.value
    report = DomainSeminormReport(gamma=gamma, beta=b, flavor=flavor,
                                  starred=starred, components=components,
                                  value=total)
    return total, report


# ---------------------------------------------------------------------------
# path monitor
# ---------------------------------------------------------------------------

def polar_patch(state_phi: ScalarField, reference, r_hi: float = 0.25,
                n_r: int = 96, m_theta: Optional[int] = None) -> ScalarField:
    """Resample a surface potential onto a polar patch near the cone point.

    The radial coordinate is the singular chart radius r = rho^beta / beta.
    Sphere fields are read off their own graded nodes (no interpolation);
    torus fields are resampled by bicubic wrap interpolation.
    """
    from scipy import ndimage

    from .geometry import (ConformalRep, FlatTorusBackground,
                           RoundSphereBackground, singular_radius)
    from .grids import TorusGrid

    rep = reference.representation
    if not isinstance(rep, ConformalRep):
        raise InvalidParameterError("polar patches need a conformal reference")
    b = reference.beta
    bg = rep.background
    if isinstance(bg, RoundSphereBackground):
        rho = np.tan(bg.u_full / 2.0)
        r_c = np.asarray(singular_radius(rho, b))
        keep = r_c <= r_hi
        if np.sum(keep) < 8:
            raise InvalidParameterError("polar patch is too shallow")
        grid = EdgeGrid(r_nodes=r_c[keep], theta_nodes=TWO_PI * np.arange(
            bg.m_theta) / bg.m_theta, grading_ratio=1.0)
        return ScalarField(grid=grid, values=state_phi.values[keep, :],
                           symmetry=state_phi.symmetry)
    if isinstance(bg, FlatTorusBackground):
        m_theta = m_theta or 16
        tg: TorusGrid = bg.grid
        rho_hi = min(0.35, (b * r_hi) ** (1.0 / b))
        rho = np.geomspace(3.0 * tg.h, rho_hi, n_r)
        theta = TWO_PI * np.arange(m_theta) / m_theta
        rr, th = np.meshgrid(rho, theta, indexing="ij")
        x = rr * np.cos(th)
        y = rr * np.sin(th)
        ix = x / tg.h - 0.5
        iy = y / tg.h - 0.5
        vals = ndimage.map_coordinates(state_phi.values, [ix, iy], order=3,
                                       mode="grid-wrap")
        grid = EdgeGrid(r_nodes=np.asarray(singular_radius(rho, b)),
                        theta_nodes=theta, grading_ratio=1.0)
        return ScalarField(grid=grid, values=vals)
    raise InvalidParameterError("unsupported reference for polar patches")


@dataclass(frozen=True)
class PathHolderReport:
    gamma: float
    flavor: str
    seminorms: Tuple[float, ...]
    median: float
    bound_factor: float
    unbounded_growth: bool


def continuity_path_holder_monitor(states: Sequence, reference, gamma: float,
                                   flavor: str = EDGE, seed: int = 0,
                                   n_pairs: int = 30_000) -> PathHolderReport:
    """Domain seminorms of phi(s) along a continuity path, with growth flags."""
    values = []
    for state in states:
        patch = polar_patch(state.phi, reference)
        total, _ = domain_seminorm(patch, gamma, reference.beta, flavor,
                                   seed=seed, n_pairs=n_pairs)
        values.append(total)
    med = float(np.median(values))
    factor = float(np.max(values) / med) if med > 0 else 0.0
    return PathHolderReport(gamma=gamma, flavor=flavor, seminorms=tuple(values),
                            median=med, bound_factor=factor,
                            unbounded_growth=bool(factor > 3.0))
