"""Grids, coordinate transforms, reference surfaces, and exact oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from edgelab import (
    ConeAngle,
    InvalidParameterError,
    PositivityFailureError,
    asymptotic_equivalence_ratios,
    build_reference_surface,
    coord_transform,
    edge_profile_ratio,
    flat_cone_metric,
    football_metric,
    make_grid,
    metric_manifest,
    metric_value_rows,
)
from edgelab.geometry import FlatConeBackground
from conftest import make_sphere_reference, make_torus_reference


class TestMakeGrid:
    def test_uniform_case(self):
        grid = make_grid(1.0, 8, 4, 1.0)
        assert np.allclose(grid.r_nodes, np.arange(1, 9) / 8.0)
        assert np.allclose(grid.theta_nodes, [0, np.pi / 2, np.pi, 3 * np.pi / 2])

    def test_geometric_depth(self):
        # oracle: direct evaluation of the grading law r_1 = R * ratio^(1-N)
        grid = make_grid(1.0, 64, 64, 1.2)
        expected = 1.2 ** (-63)
        assert expected == pytest.approx(1.0270261436495e-05, rel=1e-10)
        assert grid.r_min == pytest.approx(expected, rel=1e-13)
        assert grid.r_min == pytest.approx(1.0e-5, rel=0.05)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParameterError):
            make_grid(-1.0, 64, 64, 1.2)
        with pytest.raises(InvalidParameterError):
            make_grid(1.0, 4, 64, 1.2)
        with pytest.raises(InvalidParameterError):
            make_grid(1.0, 64, 48, 1.2)  # not a power of two
        with pytest.raises(InvalidParameterError):
            make_grid(1.0, 64, 64, 0.9)

    def test_cone_angle_domain(self):
        with pytest.raises(InvalidParameterError):
            ConeAngle(0.0)
        with pytest.raises(InvalidParameterError):
            ConeAngle(1.2)


class TestCoordTransform:
    def test_half_angle_examples(self):
        assert coord_transform(1.0, 0.5, "to_singular") == pytest.approx(2.0)
        assert coord_transform(2.0, 0.5, "from_singular") == pytest.approx(1.0)

    def test_zero_rejected(self):
        from edgelab import DomainError

        with pytest.raises(DomainError):
            coord_transform(0.0, 0.5, "to_singular")

    @pytest.mark.parametrize("beta", [0.3, 0.5, 0.75, 1.0])
    def test_round_trip_on_principal_branch(self, beta):
        rng = np.random.default_rng(7)
        rho = 10.0 ** rng.uniform(-6, 0, size=100)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=100)
        z = rho * np.exp(1j * theta)
        back = coord_transform(coord_transform(z, beta, "to_singular"),
                               beta, "from_singular")
        assert np.max(np.abs(back - z) / np.abs(z)) < 1e-12

    @given(rho=st.floats(1e-6, 1.0), theta=st.floats(0.0, 2.0 * math.pi,
                                                     exclude_max=True),
           beta=st.sampled_from([0.3, 0.5, 0.75, 1.0]))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, rho, theta, beta):
        z = rho * np.exp(1j * theta)
        back = coord_transform(coord_transform(z, beta, "to_singular"),
                               beta, "from_singular")
        assert abs(back - z) <= 1e-12 * abs(z) + 1e-15


class TestFootball:
    def test_round_sphere_limit(self):
        metric = football_metric(1.0, n_r=64)
        r, f = metric.representation.disc.t, metric.representation.disc.f_node
        assert np.allclose(f, np.sin(r))

    def test_constant_curvature_identity(self):
        from edgelab import gauss_curvature

        metric = football_metric(0.5, n_r=64)
        K = gauss_curvature(metric)
        assert np.max(np.abs(K.values - 1.0)) < 1e-10

    @pytest.mark.parametrize("beta", [0.3, 0.5, 0.75, 1.0])
    def test_area_by_quadrature(self, beta):
        # oracle: independent quadrature of 2 pi beta sin r over (0, pi)
        area, err = quad(lambda r: 2.0 * math.pi * beta * math.sin(r), 0.0, math.pi)
        assert err < 1e-10
        assert area == pytest.approx(4.0 * math.pi * beta, abs=1e-10)
        assert football_metric(beta, n_r=32).area == pytest.approx(area, abs=1e-10)

    def test_discrete_area_converges(self):
        beta = 0.6
        errs = []
        for n in (64, 128):
            m = football_metric(beta, n_r=n)
            errs.append(abs(np.sum(m.quadrature_weights()) - 4 * math.pi * beta))
        assert errs[1] < 0.35 * errs[0]


class TestFlatCone:
    def test_euclidean_limit(self):
        metric = flat_cone_metric(1.0, 1.0, n_r=32)
        disc = metric.representation.disc
        assert np.allclose(disc.f_node, disc.t)

    def test_flatness(self):
        from edgelab import gauss_curvature

        metric = flat_cone_metric(0.5, 1.0, n_r=32)
        K = gauss_curvature(metric)
        assert np.max(np.abs(K.values)) < 1e-10

    def test_circumference(self):
        beta = 0.7
        metric = flat_cone_metric(beta, 2.0, n_r=32)
        disc = metric.representation.disc
        circumference = 2.0 * math.pi * disc.f_node
        assert np.allclose(circumference, 2.0 * math.pi * beta * disc.t, rtol=1e-12)


class TestReferenceSurface:
    def test_disk_c_to_zero_degenerates_to_background(self):
        from edgelab import make_grid

        grid = make_grid(1.0, 32, 8, 1.2)
        bg = FlatConeBackground(0.5, grid)
        ref = build_reference_surface(bg, [("origin", ConeAngle(0.5))], 0.5, 0.0)
        assert np.allclose(ref.representation.lam, 1.0)
        assert ref.area == pytest.approx(bg.area)

    def test_beta_one_round_background_smooth(self):
        ref = make_sphere_reference(1.0, n_r=32, c=0.0)
        assert np.allclose(ref.representation.lam, 1.0)

    def test_torus_positivity_and_profile_ratio(self):
        ref = make_torus_reference(n=32)
        assert np.all(ref.representation.lam > 0.0)
        # near-edge profile f(r)/r -> beta, sampled from the analytic factor
        rho = (0.5 * 1e-4) ** 2  # chart radius giving r approx 1e-4
        ratio = edge_profile_ratio(ref, rho)
        assert ratio == pytest.approx(0.5, abs=1e-3)

    def test_positivity_failure_reports_node(self):
        with pytest.raises(PositivityFailureError) as err:
            make_sphere_reference(0.5, n_r=32, c=5.0)
        assert err.value.node is not None

    @pytest.mark.parametrize("make", [lambda: make_sphere_reference(0.5, n_r=32),
                                      lambda: make_torus_reference(n=32)])
    def test_pertgb_sampling(self, make):
        ratios = asymptotic_equivalence_ratios(make())
        assert abs(ratios[-1] - 1.0) < 1e-2
        assert abs(ratios[-2] - 1.0) < 1e-2

    def test_sphere_needs_equal_angles(self):
        from edgelab import RoundSphereBackground

        bg = RoundSphereBackground(area=2 * math.pi, n_r=32)
        with pytest.raises(InvalidParameterError):
            build_reference_surface(
                bg, [("p", ConeAngle(0.5)), ("q", ConeAngle(0.7))], 0.5, 0.1)


class TestSerialization:
    def test_manifest_and_rows(self):
        ref = make_torus_reference(n=16)
        manifest = metric_manifest(ref)
        assert manifest["topology"] == "torus-one-point"
        assert manifest["betas"] == [0.5]
        assert manifest["representation"] == "conformal"
        rows = metric_value_rows(ref)
        assert len(rows) == 16 * 16
        assert all(len(row) == 3 for row in rows)

    def test_profile_manifest(self):
        m = football_metric(0.5, n_r=16)
        manifest = metric_manifest(m)
        assert manifest["representation"] == "profile"
        assert len(manifest["r_nodes"]) == 16
