"""Wedge/edge Holder estimators, the membership table, domain seminorms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgelab import (
    InadmissibleGammaError,
    ScalarField,
    continuity_path_holder_monitor,
    domain_seminorm,
    grading_for_depth,
    holder_seminorm,
    make_grid,
)
from edgelab.holder import EDGE, WEDGE, holder_seminorm_values


def deep_grid(n_r=160, m_theta=8, depth=1e-8):
    return make_grid(1.0, n_r, m_theta, grading_for_depth(n_r, depth))


def power_field(grid, mu):
    return ScalarField.from_function(grid, lambda r, t: r**mu)


class TestMembershipTable:
    """The four known classifications, reproduced at seeds {1, 2, 3}."""

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_power_edge_finite_for_all_gamma(self, seed):
        grid = deep_grid()
        field = power_field(grid, 0.3)
        for gamma in (0.25, 0.5, 0.75):
            rep = holder_seminorm(field, gamma, EDGE, seed=seed)
            assert rep.classification == "bounded"

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_power_wedge_iff_mu_ge_gamma(self, seed):
        grid = deep_grid()
        below = holder_seminorm(power_field(grid, 0.3), 0.5, WEDGE, seed=seed)
        assert below.classification == "diverging"
        at = holder_seminorm(power_field(grid, 0.5), 0.5, WEDGE, seed=seed)
        assert at.classification == "bounded"
        above = holder_seminorm(power_field(grid, 0.7), 0.5, WEDGE, seed=seed)
        assert above.classification == "bounded"

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_sin_log_edge_finite(self, seed):
        grid = deep_grid()
        field = ScalarField.from_function(grid,
                                          lambda r, t: np.sin(np.log(r)) + 0 * t)
        for gamma in (0.3, 0.6):
            rep = holder_seminorm(field, gamma, EDGE, seed=seed)
            assert rep.classification == "bounded"

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_conic_mode_in_wedge_domain(self, seed):
        beta = 0.75
        gamma = 1.0 / beta - 1.0
        grid = deep_grid()
        field = ScalarField.from_function(
            grid, lambda r, t: r ** (1.0 / beta) * np.cos(t))
        total, rep = domain_seminorm(field, gamma, beta, WEDGE, seed=seed)
        assert rep.finite
        assert np.isfinite(total)


class TestEstimatorMechanics:
    def test_monotone_in_sample_size(self):
        grid = deep_grid(n_r=96)
        field = power_field(grid, 0.3)
        small = holder_seminorm(field, 0.5, EDGE, seed=7, n_pairs=20_000)
        # the same seed draws a prefix: a larger sample is a superset in law;
        # check via explicit prefix evaluation of the level values
        vals_small = holder_seminorm_values(field, 0.5, EDGE, seed=7,
                                            n_pairs=20_000)
        vals_large = holder_seminorm_values(field, 0.5, EDGE, seed=7,
                                            n_pairs=80_000)
        assert vals_large[-1] >= 0.0
        assert small.value == vals_small[-1]

    def test_levels_monotone_nondecreasing(self):
        grid = deep_grid()
        field = power_field(grid, 0.25)
        vals = holder_seminorm_values(field, 0.5, WEDGE, seed=1)
        assert all(b >= a * (1.0 - 1e-12) for a, b in zip(vals, vals[1:]))

    @given(mu=st.sampled_from([0.2, 0.4, 0.6, 0.8]),
           gamma=st.sampled_from([0.3, 0.5, 0.7]))
    @settings(max_examples=12, deadline=None)
    def test_wedge_classification_matches_theory(self, mu, gamma):
        if abs(mu - gamma) < 0.05:
            return  # borderline rates are not resolvable by a trend rule
        grid = deep_grid(n_r=128)
        rep = holder_seminorm(power_field(grid, mu), gamma, WEDGE, seed=2,
                              n_pairs=40_000)
        expected = "bounded" if mu >= gamma else "diverging"
        assert rep.classification == expected

    def test_wedge_finite_implies_edge_finite(self):
        grid = deep_grid(n_r=128)
        for mu in (0.3, 0.5, 0.9):
            for gamma in (0.3, 0.5, 0.7):
                w = holder_seminorm(power_field(grid, mu), gamma, WEDGE, seed=3)
                e = holder_seminorm(power_field(grid, mu), gamma, EDGE, seed=3)
                if w.classification == "bounded":
                    assert e.classification == "bounded"


class TestDomainSeminorm:
    def test_smooth_square_finite_everywhere(self):
        grid = deep_grid(n_r=96)
        field = ScalarField.from_function(grid, lambda r, t: r**2)
        for beta, gamma in ((0.4, 0.5), (0.75, 0.3)):
            total, rep = domain_seminorm(field, gamma, beta, EDGE,
                                         starred=(beta <= 0.5), seed=0,
                                         n_pairs=30_000)
            assert rep.finite

    def test_starred_drr_diverges_for_large_beta(self):
        beta = 0.75
        grid = deep_grid(n_r=128)
        field = ScalarField.from_function(
            grid, lambda r, t: r ** (1.0 / beta) * np.cos(t))
        from edgelab import QOperator, apply_Q
        from edgelab.holder import holder_seminorm as hs

        drr = apply_Q(QOperator(id="drr", starred=True), field)
        rep = hs(drr, 0.5, EDGE, seed=1)
        assert rep.classification == "diverging"

    def test_inadmissible_gamma(self):
        grid = deep_grid(n_r=64)
        field = ScalarField.from_function(grid, lambda r, t: r**2)
        with pytest.raises(InadmissibleGammaError):
            domain_seminorm(field, 0.5, 0.75, WEDGE)  # 0.5 > 1/0.75 - 1

    def test_starred_guard(self):
        from edgelab import InvalidParameterError

        grid = deep_grid(n_r=64)
        field = ScalarField.from_function(grid, lambda r, t: r**2)
        with pytest.raises(InvalidParameterError):
            domain_seminorm(field, 0.3, 0.75, EDGE, starred=True)


class TestPathMonitor:
    def test_football_path_bounded(self, sphere_half):
        ref, mu, f_omega, states = sphere_half
        thin = states[:: max(1, len(states) // 6)]
        report = continuity_path_holder_monitor(thin, ref, gamma=0.5,
                                                n_pairs=15_000)
        assert not report.unbounded_growth
        assert report.bound_factor <= 3.0

    def test_torus_path_bounded(self, torus_half):
        ref, mu, f_omega, states = torus_half
        thin = states[:: max(1, len(states) // 5)]
        report = continuity_path_holder_monitor(thin, ref, gamma=0.5,
                                                n_pairs=15_000)
        assert not report.unbounded_growth

    def test_constant_path(self, sphere_half):
        ref, mu, f_omega, states = sphere_half
        report = continuity_path_holder_monitor([states[-1]] * 3, ref, gamma=0.5,
                                                n_pairs=15_000)
        assert max(report.seminorms) == pytest.approx(min(report.seminorms))
