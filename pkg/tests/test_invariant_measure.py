import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare, poisson

from sinai_zrp.environment import DriftField, quenched_drift
from sinai_zrp.invariant_measure import (
    PhiTable,
    expect,
    le_fugacities,
    moments,
    partition_Z,
    phi_of_rho,
    relative_entropy_le,
    sample_product,
    scale_to_mass,
    single_site_law,
    solve_fugacities,
    stationarity_residual,
)
from sinai_zrp.rates import preset

LIN = preset("linear")
G5 = preset("kplusmin5")


def test_poisson_case_closed_forms():
    for phi in (0.1, 1.0, 4.0):
        z, _ = partition_Z(LIN, phi)
        assert math.isclose(z, math.exp(phi), rel_tol=1e-13)
        m, v = moments(LIN, phi)
        assert math.isclose(m, phi, rel_tol=1e-13) and math.isclose(v, phi, rel_tol=1e-12)
        law = single_site_law(LIN, phi)
        assert np.allclose(law.p, poisson.pmf(np.arange(law.trunc + 1), phi), atol=1e-15)


@pytest.mark.parametrize("phi", [0.5, 1.0, 3.0])
def test_mean_rate_equals_fugacity(phi):
    assert abs(expect(G5, phi, G5) - phi) < 1e-10


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(0.01, 20.0))
def test_phi_inverts_mean(rho):
    phi, dphi = phi_of_rho(G5, rho)
    assert abs(moments(G5, phi)[0] - rho) <= 1e-12 * (1 + rho)
    # linear bounds g_* rho <= Phi <= g^* rho and 0 < Phi' <= g^*
    assert G5.g_star_lower * rho * (1 - 1e-12) <= phi <= G5.g_star_upper * rho * (1 + 1e-12)
    assert 0 < dphi <= G5.g_star_upper + 1e-9


def test_phi_table_is_monotone():
    t = PhiTable.build(G5, 10.0)
    rho = np.linspace(0, 10, 500)
    vals = t.phi(rho)
    assert np.all(np.diff(vals) > 0)
    exact = np.array([phi_of_rho(G5, r)[0] for r in rho[1::50]])
    assert np.max(np.abs(vals[1::50] - exact)) < 1e-6
    with pytest.raises(ValueError):
        t.phi(11.0)


@pytest.mark.parametrize("N", [64, 512, 4096])
def test_fugacities_solve_stationarity(N):
    env = quenched_drift(7, "rademacher", N, 0.1)
    prof = solve_fugacities(env)
    assert prof.phi.max() == 1.0 and np.all(prof.phi > 0)
    assert np.max(np.abs(stationarity_residual(prof.phi, env))) <= 1e-10
    # constant flux gamma = r_k phi_k - l_{k+1} phi_{k+1}
    r, l = 0.5 + env.bias, 0.5 - env.bias
    flux = r * prof.phi - np.roll(l * prof.phi, -1)
    assert np.allclose(flux, prof.gamma, atol=1e-12)


def test_fugacities_invariant_under_scaling():
    env = quenched_drift(3, "rademacher", 300, 0.1)
    a = solve_fugacities(env, phi_1=1.0)
    b = solve_fugacities(env, phi_1=17.0)
    assert np.array_equal(a.phi, b.phi)


def test_homogeneous_fugacities_are_flat():
    prof = solve_fugacities(DriftField.zero(50))
    assert np.allclose(prof.phi, 1.0) and abs(prof.gamma) < 1e-15


def test_sample_product_marginals():
    rng = np.random.default_rng(5)
    phis = np.full(20000, 1.3)
    eta = sample_product(phis, G5, rng)
    law = single_site_law(G5, 1.3)
    counts = np.bincount(eta, minlength=law.trunc + 1)[:8]
    exp = law.p[:8] * eta.size
    exp = np.append(exp, eta.size - exp.sum())
    obs = np.append(counts, eta.size - counts.sum())
    assert chisquare(obs, exp).pvalue > 0.01


def test_relative_entropy_poisson_oracle():
    N = 50
    le_phi = np.full(N, 1.0)
    prof_phi = np.full(N, math.exp(-1))
    rho = le_phi.copy()
    h, per = relative_entropy_le(le_phi, prof_phi, rho, LIN)
    kl = rho * np.log(le_phi / prof_phi) + prof_phi - le_phi
    assert abs(h - kl.sum()) < 1e-12 and abs(per - h / N) < 1e-15
    assert relative_entropy_le(le_phi, le_phi, rho, LIN)[0] == 0.0


def test_relative_entropy_is_order_N():
    per = []
    for N in (64, 512):
        prof = solve_fugacities(quenched_drift(7, "rademacher", N, 0.1))
        le_phi, rho = le_fugacities(lambda x: 2.0 + 0 * x, N, G5)
        per.append(relative_entropy_le(le_phi, prof.phi, rho, G5)[1])
    assert max(per) < 3 * min(per)


def test_scale_to_mass():
    prof = solve_fugacities(quenched_drift(7, "rademacher", 256, 0.1))
    phi, rho = scale_to_mass(prof.phi, G5, 1.5)
    assert abs(rho.mean() - 1.5) < 1e-10
    assert np.allclose(phi / prof.phi, phi[0] / prof.phi[0])
