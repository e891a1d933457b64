"""Expansion fitting, structure verdicts, and the f_omega expansion shape."""

import numpy as np
import pytest

from edgelab import (
    IllConditionedBasisError,
    ScalarField,
    f_omega_expansion_check,
    fit_expansion,
    grading_for_depth,
    make_grid,
    surface_polar_field,
    twisted_ricci_potential,
    verify_structure,
)


def synth_grid(n_r=192, m_theta=8, depth=1e-6):
    return make_grid(1.0, n_r, m_theta, grading_for_depth(n_r, depth))


class TestFitExpansion:
    def test_synthetic_round_trip(self):
        beta = 2.0 / 3.0
        grid = synth_grid()
        u = ScalarField.from_function(
            grid, lambda r, t: 1.0 + 0.5 * r**1.5 * np.cos(t) + 0.25 * r**2)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        assert fit.coefficient(0, 0, 0, 0) == pytest.approx(1.0, abs=1e-8)
        assert fit.coefficient(0, 1, 0, 1) == pytest.approx(0.5, abs=1e-8)
        assert fit.coefficient(2, 0, 0, 0) == pytest.approx(0.25, abs=1e-8)

    def test_linear_term_not_suppressed(self):
        # the fitter must recover an r^1 term faithfully; structure verdicts
        # are a separate concern
        beta = 2.0 / 3.0
        grid = synth_grid()
        u = ScalarField.from_function(grid, lambda r, t: 1.0 + 0.1 * r + 0 * t)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        assert fit.coefficient(1, 0, 0, 0) == pytest.approx(0.1, abs=1e-8)

    def test_log_column_recovery(self):
        beta = 0.75
        grid = synth_grid()
        u = ScalarField.from_function(
            grid, lambda r, t: 1.0 + 0.02 * r**2 * np.log(r) + 0 * t)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        assert fit.coefficient(2, 0, 1, 0) == pytest.approx(0.02, abs=1e-6)

    def test_collision_merges_near_half(self):
        beta = 0.5
        grid = synth_grid()
        u = ScalarField.from_function(grid, lambda r, t: 1.0 + 0.3 * r**2 + 0 * t)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        assert fit.merged_collision
        merged = fit.coefficient(2, 0, 0, 0) + fit.coefficient(0, 1, 0, 0)
        assert merged == pytest.approx(0.3, abs=1e-7)

    def test_collision_raises_away_from_half(self):
        beta = 0.33337  # 1/beta = 2.99997 collides with 3, beta far from 1/2
        grid = synth_grid(n_r=64)
        u = ScalarField.from_function(grid, lambda r, t: 1.0 + 0 * t * r)
        with pytest.raises(IllConditionedBasisError) as err:
            fit_expansion(u, beta, (1e-4, 0.5),
                          basis_spec=[(0, 0, 0), (3, 0, 0), (0, 1, 0)])
        assert err.value.colliding_pair is not None

    def test_window_stability(self, sphere_threequarters):
        ref, mu, f_omega, states = sphere_threequarters
        patch = surface_polar_field(states[-1].phi, ref, r_hi=0.3)
        lo = 1.05 * patch.grid.r_min
        fit1 = fit_expansion(patch, 0.75, (lo, 4e-2))
        fit2 = fit_expansion(patch, 0.75, (lo, 2e-2))
        a1, a2 = fit1.coefficient(0, 0), fit2.coefficient(0, 0)
        assert abs(a1 - a2) <= 1e-4 * max(abs(a1), 1e-10)


class TestVerifyStructure:
    def test_football_solution_passes(self, sphere_threequarters):
        ref, mu, f_omega, states = sphere_threequarters
        patch = surface_polar_field(states[-1].phi, ref, r_hi=0.3)
        fit = fit_expansion(patch, 0.75, (1.05 * patch.grid.r_min, 2e-2))
        verdicts = verify_structure(fit, 0.75)
        assert verdicts.all_pass, verdicts.details
        assert abs(fit.coefficient(1, 0)) < 1e-5 * abs(fit.coefficient(0, 0))

    def test_football_half_passes_with_merge(self):
        from conftest import make_sphere_reference
        from edgelab import continuity_solve, natural_mu, twisted_ricci_potential

        ref = make_sphere_reference(0.5, n_r=192)
        mu = natural_mu(ref)
        f_omega, _ = twisted_ricci_potential(ref, mu)
        states = continuity_solve(ref, mu, f_omega=f_omega,
                                  compute_lambda1=False)
        patch = surface_polar_field(states[-1].phi, ref, r_hi=0.3)
        fit = fit_expansion(patch, 0.5, (1.05 * patch.grid.r_min, 1e-2))
        assert fit.merged_collision
        verdicts = verify_structure(fit, 0.5)
        assert verdicts.a10_absent and verdicts.log_free_below_two

    def test_synthetic_r1_violation(self):
        beta = 0.75
        grid = synth_grid()
        u = ScalarField.from_function(grid, lambda r, t: 1.0 + 0.1 * r + 0 * t)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        verdicts = verify_structure(fit, beta)
        assert not verdicts.a10_absent

    def test_synthetic_conforming_ladder(self):
        beta = 0.75
        grid = synth_grid()
        u = ScalarField.from_function(
            grid, lambda r, t: 1.0 + 0.4 * r ** (1 / beta) * np.sin(t)
            + 0.2 * r**2)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        verdicts = verify_structure(fit, beta)
        assert verdicts.all_pass
        assert fit.mode1_exponent == pytest.approx(1.0 / beta, abs=1e-3)

    def test_log_violation_detected(self):
        beta = 0.75
        grid = synth_grid()
        u = ScalarField.from_function(
            grid, lambda r, t: 1.0 + 0.05 * r * np.log(r) * 0 + 0.05
            * np.log(r) * r**2 + 0 * t)
        fit = fit_expansion(u, beta, (1e-5, 0.5))
        verdicts = verify_structure(fit, beta)
        assert not verdicts.log_free_below_two


class TestFOmegaExpansion:
    def test_football_trivially_conforming(self):
        from edgelab import football_metric

        metric = football_metric(0.5, n_r=64)
        f, _ = twisted_ricci_potential(metric, 1.0)
        grid = synth_grid(n_r=96)
        zero = ScalarField.from_function(grid, lambda r, t: 0.0 * r)
        report = f_omega_expansion_check(zero, 0.5)
        assert report.conforming
        assert f.sup_norm() < 1e-9

    def test_torus_reference_conforms(self, torus_half):
        ref, mu, f_omega, _ = torus_half
        # evaluate the closed-form potential directly on a deep polar patch
        conic = ref.representation.conic
        grid = synth_grid(n_r=128, m_theta=16, depth=1e-5)
        b = 0.5

        def f_polar(r, t):
            rho = (b * r) ** (1.0 / b)
            x, y = rho * np.cos(t), rho * np.sin(t)
            raw = conic.f_omega_raw(x, y, mu)
            return raw

        field = ScalarField.from_function(grid, f_polar)
        report = f_omega_expansion_check(field, b, r_window=(1e-4, 0.05))
        assert report.conforming
        assert report.deep_band_relative < 1e-4

    def test_synthetic_violation(self):
        grid = synth_grid(n_r=96)
        u = ScalarField.from_function(grid, lambda r, t: 1.0 + 0.5 * r**0.3 + 0 * t)
        report = f_omega_expansion_check(u, 0.75, r_window=(1e-5, 0.1))
        assert not report.conforming
