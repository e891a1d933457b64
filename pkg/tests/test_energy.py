"""Twisted Ricci potential, I/J functionals, K-energy routes, monotonicity."""

import math

import numpy as np
import pytest

from edgelab import (
    ConeAngle,
    GaussBonnetMismatchError,
    ScalarField,
    energy_I_J,
    energy_report,
    football_metric,
    gauss_bonnet_defect,
    k_energy_closed,
    k_energy_path,
    linear_path,
    monotonicity_report,
    natural_mu,
    ricci_iterate,
    twisted_ricci_potential,
)
from edgelab.geometry import FlatTorusBackground, build_reference_surface
from edgelab.energy import _field_grid
from conftest import make_sphere_reference, make_torus_reference


def _admissible(reference, rng=None, amplitude=2e-2):
    """A smooth admissible potential on the reference's grid."""
    from edgelab.cli import _random_admissible_potential

    rng = rng or np.random.default_rng(11)
    return _random_admissible_potential(reference, rng, amplitude)


class TestTwistedRicciPotential:
    def test_football_reference_is_ke(self):
        # the football itself solves Ric = mu omega, so f_omega vanishes
        metric = football_metric(0.5, n_r=64)
        f, check = twisted_ricci_potential(metric, 1.0)
        assert f.sup_norm() < 1e-9
        assert check < 1e-12

    def test_flat_torus_no_cone(self):
        bg = FlatTorusBackground(n=32)
        ref = build_reference_surface(bg, [("corner", ConeAngle(1.0))], 1.0, 0.0)
        f, check = twisted_ricci_potential(ref, 0.0)
        assert f.sup_norm() < 1e-12
        assert check < 1e-12

    def test_torus_normalization(self, torus_half):
        ref, mu, f_omega, _ = torus_half
        _, check = twisted_ricci_potential(ref, mu)
        assert check < 1e-10

    def test_gauss_bonnet_mismatch(self, torus_half):
        ref, mu, _, _ = torus_half
        with pytest.raises(GaussBonnetMismatchError):
            twisted_ricci_potential(ref, mu + 0.1)
        assert abs(gauss_bonnet_defect(ref, mu)) < 1e-12

    def test_torus_solves_its_equation(self, torus_half):
        # independent FD check of Delta_omega f = K - mu away from the cone
        from edgelab.discretization import torus_laplacian4

        ref, mu, f_omega, _ = torus_half
        rep = ref.representation
        bg = rep.background
        lap4 = torus_laplacian4(bg.grid)
        lam = rep.lam
        lhs = 0.5 * (lap4 @ f_omega.values.ravel()).reshape(lam.shape) / lam
        K = rep.conic.k_ref(*bg.grid.mesh())
        xw, yw = bg.grid.wrapped_offsets()
        far = np.hypot(xw, yw) > 0.2
        assert np.max(np.abs(lhs - (K - mu))[far]) < 2e-3

    def test_sphere_green_route_solves_equation(self, sphere_half):
        # the discrete Green construction is compared against the analytic
        # continuum operator away from the poles and the mesh junction; the
        # defining data itself is discrete-consistent by construction
        ref, mu, f_omega, _ = sphere_half
        rep = ref.representation
        u = rep.background.u_full
        k_ref = rep.k_analytic(u)[:, None]
        lhs = ref.complex_laplacian_apply(f_omega.values)
        resid = np.abs(lhs - (k_ref - mu))
        mid = (u > 0.3) & (u < np.pi - 0.3)
        assert np.max(resid[mid]) < 0.05


class TestAubinFunctionals:
    def test_constant_potential_vanishes(self, torus_half):
        ref, mu, f_omega, _ = torus_half
        phi = ScalarField(grid=_field_grid(ref),
                          values=np.full(ref.grid_shape(), 0.7))
        I, J = energy_I_J(ref, phi)
        assert abs(I) < 1e-12 and abs(J) < 1e-12

    @pytest.mark.parametrize("fixture", ["sphere_half", "torus_half"])
    def test_I_equals_2J(self, fixture, request):
        ref, mu, f_omega, _ = request.getfixturevalue(fixture)
        rng = np.random.default_rng(5)
        for _ in range(5):
            phi = _admissible(ref, rng)
            I, J = energy_I_J(ref, phi)
            assert I >= -1e-14 and J >= -1e-14
            assert abs(I - 2.0 * J) <= 1e-8 * max(abs(I), 1e-30)

    def test_quadratic_scaling(self, sphere_half):
        # I(eps phi) / I(eps phi / 2) -> 4 as eps -> 0
        ref, mu, f_omega, _ = sphere_half
        phi = _admissible(ref, np.random.default_rng(2), amplitude=1e-3)
        I1, _ = energy_I_J(ref, phi)
        I2, _ = energy_I_J(ref, phi.with_values(0.5 * phi.values))
        assert I1 / I2 == pytest.approx(4.0, abs=1e-3)


class TestKEnergy:
    def test_constant_gives_zero(self, torus_half):
        ref, mu, f_omega, _ = torus_half
        phi = ScalarField(grid=_field_grid(ref),
                          values=np.full(ref.grid_shape(), -0.3))
        assert abs(k_energy_closed(ref, phi, mu, f_omega)) < 1e-12
        path = linear_path(phi, 16)
        assert abs(k_energy_path(ref, path, mu, f_omega)) < 1e-12

    def test_cross_route_agreement(self, sphere_half):
        ref, mu, f_omega, _ = sphere_half
        rng = np.random.default_rng(4)
        for _ in range(3):
            phi = _admissible(ref, rng, amplitude=1e-2)
            closed = k_energy_closed(ref, phi, mu, f_omega)
            path = k_energy_path(ref, linear_path(phi, 64), mu, f_omega)
            assert abs(closed - path) < 1e-6

    def test_path_independence(self, sphere_half):
        ref, mu, f_omega, _ = sphere_half
        rng = np.random.default_rng(9)
        phi = _admissible(ref, rng, amplitude=1e-2)
        bump = _admissible(ref, rng, amplitude=5e-3)
        ts = np.linspace(0.0, 1.0, 64)
        path1 = linear_path(phi, 64)
        path2 = [phi.with_values(t * phi.values
                                 + t * (1.0 - t) * bump.values) for t in ts]
        e1 = k_energy_path(ref, path1, mu, f_omega)
        e2 = k_energy_path(ref, path2, mu, f_omega)
        assert abs(e1 - e2) < 2e-6

    def test_ke_solution_minimizes_along_path(self, sphere_half):
        ref, mu, f_omega, states = sphere_half
        final = k_energy_closed(ref, states[-1].phi, mu, f_omega)
        logged = [st.diagnostics["k_energy"] for st in states]
        assert final <= min(logged) + 1e-9

    def test_energy_report_chain(self, sphere_half):
        ref, mu, f_omega, _ = sphere_half
        phi = _admissible(ref, np.random.default_rng(1))
        rep = energy_report(ref, phi, mu, f_omega)
        assert rep.J <= rep.IminusJ + 1e-12
        assert rep.IminusJ <= rep.J + 1e-8 * max(abs(rep.J), 1.0)


class TestMonotonicity:
    def test_continuity_run_no_violations(self, sphere_half):
        _, _, _, states = sphere_half
        rep = monotonicity_report(states)
        assert rep.violations == ()
        assert rep.cocycle_defect is None

    def test_constant_sequence(self, torus_half):
        ref, mu, f_omega, states = torus_half
        rep = monotonicity_report([states[-1], states[-1], states[-1]])
        assert all(abs(step) < 1e-14 for step in rep.steps)

    def test_iteration_strictly_negative_until_convergence(self, torus_half):
        ref, mu, f_omega, _ = torus_half
        iters = ricci_iterate(ref, mu, tau=1.0, k_max=60, tol=1e-11,
                              f_omega=f_omega)
        rep = monotonicity_report(iters, reference=ref, f_omega=f_omega, mu=mu)
        assert rep.violations == ()
        head = rep.steps[: max(1, len(rep.steps) - 3)]
        assert all(step < 0.0 for step in head)
        assert rep.cocycle_defect is not None and rep.cocycle_defect < 1e-7
