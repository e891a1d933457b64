"""Configuration-driven pipelines: `edgelab <subcommand> --config run.toml`.

Every pipeline validates its TOML config completely before computing, writes
deterministic CSV artifacts plus a JSON manifest (config echo, versions, wall
time, verdict summary), and exits 0 when all verdicts pass, 2 on a verdict
failure, 1 on a configuration or runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, EdgeLabError
from .grids import ConeAngle, ScalarField, make_grid, grading_for_depth

PIPELINES = ("solve", "iterate", "analyze-expansion", "curvature", "spectrum",
             "holder", "energy")

_SCHEMA: Dict[str, Dict[str, tuple]] = {
    "problem": {"kind": (str,)},
    "geometry": {"topology": (str,), "beta": (float, int), "c": (float, int),
                 "mu": (str, float, int)},
    "grid": {"n_r": (int,), "m_theta": (int,), "n": (int,),
             "grading_power": (float, int)},
    "schedule": {"two_parameter": (bool,)},
    "tolerances": {"newton": (float,), "iteration": (float,)},
    "iteration": {"tau": (float, int), "k_max": (int,)},
    "expansion": {"r_lo": (float,), "r_hi": (float,), "cutoff": (float, int)},
    "curvature": {"betas": (list,), "radii_pow2": (list,), "samples": (int,),
                  "z2": (float, int), "c": (float, int)},
    "spectrum": {"metric": (str,)},
    "holder": {"function": (str,), "mu": (float, int), "gamma": (float,),
               "flavor": (str,), "depth": (float,), "n_r": (int,),
               "m_theta": (int,)},
    "energy": {"n_potentials": (int,), "amplitude": (float,)},
    "run": {"seed": (int,), "output_dir": (str,), "threads": (int,)},
}


def _validate_tables(config: dict):
    for table, body in config.items():
        if table not in _SCHEMA:
            raise ConfigError(f"unknown config table [{table}]", field=table)
        if not isinstance(body, dict):
            raise ConfigError(f"[{table}] must be a table", field=table)
        for key, val in body.items():
            if key not in _SCHEMA[table]:
                raise ConfigError(f"unknown key {table}.{key}", field=f"{table}.{key}")
            if not isinstance(val, _SCHEMA[table][key]):
                raise ConfigError(
                    f"{table}.{key} has type {type(val).__name__}",
                    field=f"{table}.{key}")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; every field checked before computation."""

    kind: str
    raw: dict
    seed: int
    output_dir: Path
    threads: Optional[int]

    @staticmethod
    def load(path: Path, kind: str, seed: Optional[int],
             output: Optional[Path], threads: Optional[int]) -> "RunConfig":
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except Exception as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        _validate_tables(raw)
        declared = raw.get("problem", {}).get("kind")
        if declared is not None and declared != kind:
            raise ConfigError(
                f"config declares problem.kind = {declared!r} but the "
                f"subcommand is {kind!r}", field="problem.kind")
        run_tbl = raw.get("run", {})
        cfg = RunConfig(
            kind=kind, raw=raw,
            seed=int(seed if seed is not None else run_tbl.get("seed", 0)),
            output_dir=Path(output if output is not None
                            else run_tbl.get("output_dir", "edgelab-out")),
            threads=threads if threads is not None else run_tbl.get("threads"),
        )
        cfg.geometry()  # force early validation for solver-like pipelines
        return cfg

    def geometry(self) -> dict:
        geo = dict(self.raw.get("geometry", {}))
        topo = geo.get("topology", "sphere-two-points")
        if topo not in ("sphere-two-points", "torus-one-point"):
            if self.kind in ("solve", "iterate", "analyze-expansion", "energy"):
                raise ConfigError(f"unsupported topology {topo!r}",
                                  field="geometry.topology")
        beta = float(geo.get("beta", 0.5))
        if not (0.0 < beta <= 1.0):
            raise ConfigError(f"beta = {beta} outside (0, 1]", field="geometry.beta")
        c = float(geo.get("c", 0.1))
        if c < 0.0:
            raise ConfigError("c must be nonnegative", field="geometry.c")
        return {"topology": topo, "beta": beta, "c": c, "mu": geo.get("mu", "auto")}


# ---------------------------------------------------------------------------
# deterministic emission
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_report(output_dir: Path, manifest: dict,
                tables: Dict[str, Tuple[Sequence[str], Sequence[Sequence]]]) -> None:
    """Write all artifacts with byte-stable content for identical inputs."""
    output_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in sorted(tables.items()):
        write_csv(output_dir / f"{name}.csv", header, rows)
    (output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest_base(cfg: RunConfig, config_path: Path) -> dict:
    import scipy

    return {
        "pipeline": cfg.kind,
        "config_echo": cfg.raw,
        "config_sha256": hashlib.sha256(config_path.read_bytes()).hexdigest(),
        "seed": cfg.seed,
        "versions": {"edgelab": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
    }


# ---------------------------------------------------------------------------
# shared construction helpers
# ---------------------------------------------------------------------------

def _build_reference(cfg: RunConfig):
    from .energy import natural_mu
    from .geometry import (FlatTorusBackground, RoundSphereBackground,
                           build_reference_surface)

    geo = cfg.geometry()
    grid = cfg.raw.get("grid", {})
    beta, c = geo["beta"], geo["c"]
    if geo["topology"] == "sphere-two-points":
        n_r = int(grid.get("n_r", 128))
        m_theta = int(grid.get("m_theta", 8))
        bg = RoundSphereBackground(area=4.0 * math.pi * beta, n_r=n_r,
                                   m_theta=m_theta,
                                   grading_power=float(grid.get("grading_power", 3.0)))
        ref = build_reference_surface(
            bg, [("pole-0", ConeAngle(beta)), ("pole-pi", ConeAngle(beta))], beta, c)
    else:
        n = int(grid.get("n", 128))
        bg = FlatTorusBackground(n=n)
        ref = build_reference_surface(bg, [("corner", ConeAngle(beta))], beta, c)
    mu = geo["mu"]
    mu = natural_mu(ref) if mu == "auto" else float(mu)
    return ref, mu, geo


def _state_rows(states, f_omega) -> Tuple[Sequence[str], List[List]]:
    from .ma_solver import estimate_monitor

    header = ["s", "t", "residual", "sup_phi", "sup_lap_phi", "I", "J",
              "E0beta", "lambda1", "c0_ok"]
    rows = []
    for st in states:
        mon = estimate_monitor(st, f_omega)
        d = st.diagnostics
        rows.append([st.s, st.t, st.residual_norm, d.get("sup_phi"),
                     d.get("sup_lap_phi"), d.get("I"), d.get("J"),
                     d.get("k_energy"), d.get("lambda1", float("nan")),
                     int(mon.c0_ok)])
    return header, rows


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _run_solve(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .energy import monotonicity_report, twisted_ricci_potential
    from .ma_solver import continuity_solve, estimate_monitor

    ref, mu, geo = _build_reference(cfg)
    tol = float(cfg.raw.get("tolerances", {}).get("newton", 1e-10))
    two_param = bool(cfg.raw.get("schedule", {}).get("two_parameter", False))
    f_omega, check = twisted_ricci_potential(ref, mu)
    states = continuity_solve(ref, mu, schedule=None, tol=tol,
                              two_parameter=two_param, f_omega=f_omega)
    mono = monotonicity_report(states)
    monitors_ok = all(estimate_monitor(st, f_omega).c0_ok for st in states)
    final = states[-1]
    verdicts = {
        "final_residual_below_tol": final.residual_norm < tol,
        "k_energy_nonincreasing": len(mono.violations) == 0,
        "c0_monitor": monitors_ok,
        "f_omega_normalization": check < 1e-10,
    }
    tables = {"states": _state_rows(states, f_omega)}
    extra = {"mu": mu, "final_s": final.s, "final_residual": final.residual_norm,
             "n_states": len(states)}
    return {"tables": tables, "extra": extra}, verdicts, all(verdicts.values())


def _run_iterate(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .energy import twisted_ricci_potential
    from .ma_solver import ricci_iterate

    ref, mu, geo = _build_reference(cfg)
    it = cfg.raw.get("iteration", {})
    tau = float(it.get("tau", 1.0 if mu <= 0 else 2.0 / mu))
    k_max = int(it.get("k_max", 60))
    tol = float(cfg.raw.get("tolerances", {}).get("iteration", 1e-9))
    f_omega, _ = twisted_ricci_potential(ref, mu)
    states = ricci_iterate(ref, mu, tau=tau, k_max=k_max, tol=tol, f_omega=f_omega)
    energies = [st.energy_k for st in states]
    verdicts = {
        "energy_nonincreasing": all(b <= a + 1e-10 for a, b in
                                    zip(energies, energies[1:])),
        "converged": float(np.max(np.abs(states[-1].phi_k.values))) < tol,
    }
    rows = [[st.k, st.energy_k, float(np.max(np.abs(st.phi_k.values)))]
            for st in states]
    tables = {"iteration": (["k", "E0beta", "increment_sup"], rows)}
    extra = {"mu": mu, "tau": tau, "n_steps": len(states)}
    return {"tables": tables, "extra": extra}, verdicts, all(verdicts.values())


def _run_expansion(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .asymptotics import fit_expansion, surface_polar_field, verify_structure
    from .energy import twisted_ricci_potential
    from .ma_solver import continuity_solve

    ref, mu, geo = _build_reference(cfg)
    f_omega, _ = twisted_ricci_potential(ref, mu)
    states = continuity_solve(ref, mu, f_omega=f_omega)
    exp_cfg = cfg.raw.get("expansion", {})
    patch = surface_polar_field(states[-1].phi, ref)
    r_lo = float(exp_cfg.get("r_lo", max(4.0 * patch.grid.r_min, 1e-4)))
    r_hi = float(exp_cfg.get("r_hi", patch.grid.r_max * 0.8))
    fit = fit_expansion(patch, ref.beta, (r_lo, r_hi),
                        cutoff=float(exp_cfg.get("cutoff", 4.0)))
    verd = verify_structure(fit, ref.beta)
    verdicts = {
        "a00_theta_independent": verd.a00_theta_independent,
        "a10_absent": verd.a10_absent,
        "log_free_below_two": verd.log_free_below_two,
        "mode1_exponent_matches": verd.mode1_exponent_matches,
        "ladder_ordering": verd.ladder_ordering,
    }
    term_rows = [[j, k, ell, m, c] for (j, k, ell, m, c) in fit.terms]
    band_rows = [[r, v] for r, v in fit.residual_profile]
    tables = {
        "expansion_terms": (["j", "k", "ell", "theta_mode", "coefficient"], term_rows),
        "expansion_residual": (["band_r", "max_residual"], band_rows),
    }
    extra = {"mu": mu, "mode1_exponent": fit.mode1_exponent,
             "window": [r_lo, r_hi]}
    return {"tables": tables, "extra": extra}, verdicts, all(verdicts.values())


def _run_curvature(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    import sympy as sy

    from .curvature import LocalModelMetric, bisectional_scan, model_symbols

    cur = cfg.raw.get("curvature", {})
    betas = [float(b) for b in cur.get("betas", [0.3, 0.5, 0.6, 0.75, 0.9])]
    lo, hi = (cur.get("radii_pow2", [4, 14]) + [14])[:2]
    radii = [2.0 ** (-k) for k in range(int(lo), int(hi) + 1)]
    samples = int(cur.get("samples", 200))
    z2 = complex(cur.get("z2", 1.0))
    c = float(cur.get("c", 1.0))
    rows = []
    verdicts = {}
    for beta in betas:
        z, zb = model_symbols(2)
        a_expr = sy.exp(z[1] * zb[1] / (4 * sy.Float(beta)))
        model = LocalModelMetric(n=2, beta=ConeAngle(beta), c=c,
                                 hermitian_weight=a_expr,
                                 background_potential=z[0] * zb[0] + z[1] * zb[1],
                                 symbols=(z, zb))
        scan = bisectional_scan(model, radii, vector_samples=samples,
                                seed=cfg.seed, z_rest=(z2,))
        for rho, mb, lt, ft in zip(scan.radii, scan.max_bisec, scan.lambda_1111,
                                   scan.max_full_tensor):
            rows.append([beta, rho, mb, lt, ft])
        slope = scan.loglog_slope(np.maximum(np.asarray(scan.max_bisec), 1e-6))
        # growth toward the divisor shows as a negative slope against log rho
        verdicts[f"bounded_trend_beta_{beta}"] = slope > -0.05
    tables = {"curvature_scan": (["beta", "rho", "max_bisec", "lambda_1111",
                                  "max_full_tensor"], rows)}
    return {"tables": tables, "extra": {"radii": radii}}, verdicts, all(verdicts.values())


def _run_spectrum(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .geometry import football_metric
    from .model_cone import lowest_eigenvalue

    spec_cfg = cfg.raw.get("spectrum", {})
    which = spec_cfg.get("metric", "reference")
    if which == "football":
        geo = cfg.geometry()
        grid = cfg.raw.get("grid", {})
        metric = football_metric(geo["beta"], n_r=int(grid.get("n_r", 128)),
                                 m_theta=int(grid.get("m_theta", 8)))
        mu = 1.0
    else:
        metric, mu, _ = _build_reference(cfg)
    lam1, field = lowest_eigenvalue(metric)
    verdicts = {"eigenvalue_positive": lam1 > 0.0}
    if which == "football" and mu > 0:
        verdicts["eigenvalue_bound"] = lam1 >= mu * (1.0 - 0.02)
    rows = [[lam1]]
    field_rows = [[float(v)] for v in field.values.reshape(-1)[:4096]]
    tables = {"eigenvalue": (["lambda1"], rows),
              "eigenfield": (["value"], field_rows)}
    return {"tables": tables, "extra": {"lambda1": lam1}}, verdicts, all(verdicts.values())


def _run_holder(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .holder import holder_seminorm

    hol = cfg.raw.get("holder", {})
    gamma = float(hol.get("gamma", 0.5))
    flavor = {"w": "wedge", "e": "edge"}.get(hol.get("flavor", "edge"),
                                             hol.get("flavor", "edge"))
    kind = hol.get("function", "power")
    mu_exp = float(hol.get("mu", 0.3))
    n_r = int(hol.get("n_r", 160))
    depth = float(hol.get("depth", 1e-8))
    grid = make_grid(1.0, n_r, int(hol.get("m_theta", 8)),
                     grading_for_depth(n_r, depth))
    rr, tt = grid.mesh()
    if kind == "power":
        vals = rr ** mu_exp
    elif kind == "sinlog":
        vals = np.sin(np.log(rr)) * np.ones_like(tt)
    elif kind == "conic-mode":
        vals = rr ** mu_exp * np.cos(tt)
    else:
        raise ConfigError(f"unknown holder.function {kind!r}", field="holder.function")
    field = ScalarField(grid=grid, values=vals)
    rep = holder_seminorm(field, gamma, flavor, seed=cfg.seed)
    verdicts = {"report_produced": True}
    rows = [[i, v] for i, v in enumerate(rep.seminorm_by_refinement)]
    tables = {"holder": (["level", "seminorm"], rows)}
    extra = {"classification": rep.classification, "gamma": gamma,
             "flavor": flavor}
    return {"tables": tables, "extra": extra}, verdicts, True


def _run_energy(cfg: RunConfig) -> Tuple[dict, dict, bool]:
    from .energy import energy_report, twisted_ricci_potential
    from .grids import GENERAL

    ref, mu, geo = _build_reference(cfg)
    en = cfg.raw.get("energy", {})
    n_pot = int(en.get("n_potentials", 5))
    amp = float(en.get("amplitude", 1e-2))
    f_omega, _ = twisted_ricci_potential(ref, mu)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    ok = True
    for i in range(n_pot):
        phi = _random_admissible_potential(ref, rng, amp)
        rep = energy_report(ref, phi, mu, f_omega)
        rows.append([i, rep.I, rep.J, rep.IminusJ, rep.E0beta_closed,
                     rep.E0beta_path, rep.V])
        ok = ok and abs(rep.I - 2.0 * rep.J) <= 1e-8 * max(abs(rep.I), 1e-30)
        ok = ok and abs(rep.E0beta_closed - rep.E0beta_path) <= 1e-6
    verdicts = {"I_equals_2J": ok}
    tables = {"energy": (["index", "I", "J", "IminusJ", "E0_closed", "E0_path",
                          "V"], rows)}
    return {"tables": tables, "extra": {"mu": mu}}, verdicts, ok


def _random_admissible_potential(reference, rng, amplitude: float):
    """Smooth random potential with omega_phi > 0 (amplitude shrunk on demand)."""
    from .energy import _field_grid
    from .geometry import FlatTorusBackground, RoundSphereBackground
    from .grids import GENERAL

    rep = reference.representation
    bg = rep.background
    if isinstance(bg, FlatTorusBackground):
        x, y = bg.grid.mesh()
        base = (rng.normal() * np.cos(2 * math.pi * x) * np.cos(2 * math.pi * y)
                + rng.normal() * np.sin(2 * math.pi * x)
                + rng.normal() * np.sin(2 * math.pi * y))
    elif isinstance(bg, RoundSphereBackground):
        u = bg.u_full[:, None]
        th = 2.0 * math.pi * np.arange(bg.m_theta)[None, :] / bg.m_theta
        base = (rng.normal() * np.cos(u) ** 2
                + rng.normal() * np.sin(u) ** 2 * np.cos(2 * th)
                + rng.normal() * np.sin(u) ** 2 * np.sin(th) * np.sin(u))
    else:
        raise ConfigError("energy corpus needs a sphere or torus reference")
    vals = amplitude * base
    grid = _field_grid(reference)
    for _ in range(40):
        ratio = 1.0 + reference.complex_laplacian_apply(vals)
        if np.all(ratio > 0.0):
            return ScalarField(grid=grid, values=vals, symmetry=GENERAL)
        vals = 0.5 * vals
    raise EdgeLabError("could not build an admissible random potential")


_RUNNERS = {
    "solve": _run_solve,
    "iterate": _run_iterate,
    "analyze-expansion": _run_expansion,
    "curvature": _run_curvature,
    "spectrum": _run_spectrum,
    "holder": _run_holder,
    "energy": _run_energy,
}


def run(config: RunConfig, config_path: Path) -> int:
    """Execute the configured pipeline; returns the process exit status."""
    if config.threads is not None:
        os.environ.setdefault("OMP_NUM_THREADS", str(config.threads))
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(config.threads))
    t0 = time.perf_counter()
    np.random.seed(config.seed)  # legacy global, in case user code relies on it
    result, verdicts, all_pass = _RUNNERS[config.kind](config)
    wall = time.perf_counter() - t0
    manifest = _manifest_base(config, config_path)
    manifest["wall_time_s"] = round(wall, 3)
    manifest["threads"] = config.threads
    manifest["verdicts"] = {k: bool(v) for k, v in verdicts.items()}
    manifest["verdict_summary"] = "all-pass" if all_pass else "failures"
    manifest["extra"] = _jsonable(result.get("extra", {}))
    emit_report(config.output_dir, manifest, result["tables"])
    return 0 if all_pass else 2


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgelab",
        description="Numerical laboratory for Kahler-Einstein edge metrics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--output", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int,
                       default=os.environ.get("EDGELAB_THREADS"))
    args = parser.parse_args(argv)
    threads = int(args.threads) if args.threads is not None else None
    try:
        cfg = RunConfig.load(args.config, args.command, args.seed, args.output,
                             threads)
        return run(cfg, args.config)
    except ConfigError as exc:
        field = f" (field: {exc.field})" if exc.field else ""
        print(f"config-error: {exc}{field}", file=sys.stderr)
        return 1
    except EdgeLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
