import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinai_zrp.blocks import (
    CanonicalBlock,
    build_block_generator,
    canonical_expectation,
    canonical_law,
    enumerate_expectation,
    enumerate_states,
    gap_envelope,
    spectral_gap,
    torus_generator,
)
from sinai_zrp.environment import DriftField, quenched_drift
from sinai_zrp.invariant_measure import phi_of_rho, solve_fugacities
from sinai_zrp.rates import preset

LIN = preset("linear")
G5 = preset("kplusmin5")


def test_enumeration_counts():
    for n, j in ((3, 2), (5, 4), (7, 3)):
        assert enumerate_states(n, j).shape == (math.comb(n + j - 1, j), n)
        assert np.all(enumerate_states(n, j).sum(axis=1) == j)


def test_exchangeable_block():
    blk = CanonicalBlock(np.ones(3), 2, LIN)
    assert abs(canonical_expectation(blk, 0, "occupancy") - 2 / 3) < 1e-14
    assert abs(canonical_expectation(blk, 1, "g") - 2 / 3) < 1e-14
    assert abs(enumerate_expectation(blk, 1, "g") - 2 / 3) < 1e-14


@settings(max_examples=30, deadline=None)
@given(phis=st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3),
       j=st.integers(1, 4), site=st.integers(0, 2), name=st.sampled_from(["linear", "kplusmin5"]))
def test_dp_matches_enumeration(phis, j, site, name):
    blk = CanonicalBlock(np.array(phis), j, preset(name))
    for obs in ("g", "occupancy"):
        assert abs(canonical_expectation(blk, site, obs) - enumerate_expectation(blk, site, obs)) < 1e-12


def test_budget():
    with pytest.raises(ValueError):
        canonical_expectation(CanonicalBlock(np.ones(65), 1, LIN), 0)
    with pytest.raises(ValueError):
        canonical_expectation(CanonicalBlock(np.ones(3), 10_001, LIN), 0)


def test_ensemble_gap_shrinks_with_l():
    gaps = []
    for l in (2, 4, 8, 16):
        n = 2 * l + 1
        v = canonical_expectation(CanonicalBlock(np.ones(n), n, G5), l, "g")
        gaps.append(abs(v - phi_of_rho(G5, 1.0)[0]))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def _setup(N=4096):
    env = quenched_drift(7, "rademacher", N, 0.1)
    return env, solve_fugacities(env)


def test_homogeneous_three_state_chain():
    env = DriftField.zero(16)
    prof = solve_fugacities(env)
    gen = build_block_generator(env, prof, LIN, 1, 5, 1)
    Q = gen.Q.toarray()
    expected = 0.5 * np.array([[-1, 1, 0], [1, -2, 1], [0, 1, -1]])
    order = np.argsort([np.argmax(s) for s in gen.states])
    assert np.allclose(Q[np.ix_(order, order)], expected)
    assert abs(spectral_gap(gen) - 0.5) < 1e-13


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 4096), l=st.integers(1, 3), j=st.integers(1, 3),
       name=st.sampled_from(["linear", "kplusmin5"]))
def test_detailed_balance_random_blocks(k, l, j, name):
    env, prof = _SETUP
    gen = build_block_generator(env, prof, preset(name), j, k, l)
    assert gen.detailed_balance_residual() < 1e-10
    assert np.allclose(gen.Q.sum(axis=1), 0.0, atol=1e-13)
    assert abs(gen.kappa.sum() - 1) < 1e-12


_SETUP = _setup()


def test_two_block_chain_is_irreducible_and_reversible():
    env, prof = _SETUP
    gen = build_block_generator(env, prof, LIN, 2, 10, 1, k2=40)
    assert gen.irreducible() and gen.detailed_balance_residual() < 1e-10
    with pytest.raises(ValueError):
        build_block_generator(env, prof, LIN, 2, 10, 1, k2=12)


def test_gap_envelope_and_growth():
    env, prof = _SETUP
    hom_env = DriftField.zero(64)
    hom = solve_fugacities(hom_env)
    g11 = build_block_generator(hom_env, hom, LIN, 1, 1, 1)
    c_cal = 1.0 / (spectral_gap(g11) * 9 * g11.r)
    inv = {}
    for l, j in product((1, 2, 3), (1, 2, 3)):
        gen = build_block_generator(env, prof, LIN, j, 100, l)
        inv[l, j] = 1.0 / spectral_gap(gen)
        assert inv[l, j] <= gap_envelope(gen, j, l, c_cal)
    # growth in l at fixed j is at most (2l+1)^2
    for l in (2, 3):
        assert inv[l, 2] / inv[1, 2] <= 2 * ((2 * l + 1) / 3) ** 2


def test_torus_stationary_is_canonical():
    q = np.array([0.13, -0.21, 0.07])
    env = DriftField.from_q(q)
    prof = solve_fugacities(env)
    for g in (LIN, G5):
        chain = torus_generator(env, g, 2)
        pi = chain.stationary()
        kappa = canonical_law(prof.phi, g, chain.states)
        assert np.max(np.abs(pi - kappa)) < 1e-12
