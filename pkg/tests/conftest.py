"""Shared fixtures: cached references and solved paths at test resolutions."""

import math

import numpy as np
import pytest

from edgelab import (
    ConeAngle,
    FlatTorusBackground,
    RoundSphereBackground,
    build_reference_surface,
    continuity_solve,
    natural_mu,
    twisted_ricci_potential,
)


def make_sphere_reference(beta, n_r=64, m_theta=8, c=0.1):
    bg = RoundSphereBackground(area=4.0 * math.pi * beta, n_r=n_r, m_theta=m_theta)
    return build_reference_surface(
        bg, [("pole-0", ConeAngle(beta)), ("pole-pi", ConeAngle(beta))], beta, c)


def make_torus_reference(n=64, beta=0.5, c=0.1):
    bg = FlatTorusBackground(n=n)
    return build_reference_surface(bg, [("corner", ConeAngle(beta))], beta, c)


@pytest.fixture(scope="session")
def sphere_half():
    """beta = 1/2 football problem at test resolution: (ref, mu, f_omega, states)."""
    ref = make_sphere_reference(0.5)
    mu = natural_mu(ref)
    f_omega, _ = twisted_ricci_potential(ref, mu)
    states = continuity_solve(ref, mu, f_omega=f_omega)
    return ref, mu, f_omega, states


@pytest.fixture(scope="session")
def sphere_threequarters():
    ref = make_sphere_reference(0.75)
    mu = natural_mu(ref)
    f_omega, _ = twisted_ricci_potential(ref, mu)
    states = continuity_solve(ref, mu, f_omega=f_omega)
    return ref, mu, f_omega, states


@pytest.fixture(scope="session")
def torus_half():
    """beta = 1/2 torus problem at test resolution: (ref, mu, f_omega, states)."""
    ref = make_torus_reference(n=64)
    mu = natural_mu(ref)
    f_omega, _ = twisted_ricci_potential(ref, mu)
    states = continuity_solve(ref, mu, f_omega=f_omega)
    return ref, mu, f_omega, states


def football_exact_profile(beta, u):
    """Exact football data at the round-background colatitude u.

    The football is conformal to the round sphere through the power map
    tan(r/2) = tan(u/2)^beta, so f(u) = beta sin r with r = 2 atan(tan^b(u/2)).
    """
    r = 2.0 * np.arctan(np.tan(np.asarray(u) / 2.0) ** beta)
    return r, beta * np.sin(r)
