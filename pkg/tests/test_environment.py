import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinai_zrp.environment import (
    CHUNK,
    DisorderLaw,
    DriftField,
    build_walk,
    draw_sites,
    epsilon_drift,
    gen_disorder,
    quenched_drift,
    w_prime_eps,
    window_halfwidth,
)


def test_law_parsing_and_bounds():
    assert DisorderLaw.parse("rademacher").bound == 1.0
    u = DisorderLaw.parse("uniform:0.5")
    assert u.bound == 0.5 and math.isclose(u.sigma, 0.5 / math.sqrt(3))
    with pytest.raises(ValueError):
        DisorderLaw.parse("gaussian")
    with pytest.raises(ValueError):
        DisorderLaw("cauchy")


def test_draws_are_prefix_consistent_across_chunks():
    law = DisorderLaw()
    full = draw_sites(3, law, -CHUNK - 5, 2 * CHUNK + 7)
    part = draw_sites(3, law, CHUNK - 3, CHUNK + 4)
    off = CHUNK - 3 - (-CHUNK - 5)
    assert np.array_equal(full[off:off + 7], part)
    a = gen_disorder(3, 100)
    b = gen_disorder(3, 5000)
    assert np.array_equal(a.values, b.values[:100])


def test_rademacher_values_and_mean():
    v = draw_sites(1, DisorderLaw(), 0, 200_000)
    assert set(np.unique(v)) == {-1.0, 1.0}
    assert abs(v.mean()) < 4 / math.sqrt(v.size)


def test_walk_scaling_and_periodic_shift():
    d = gen_disorder(7, 64)
    w = build_walk(d, 64)
    # X at 0 is zero and increments are r_k / (sigma sqrt N)
    assert w.grid_value(0) == 0.0
    assert np.isclose(w.grid_value(1), d.values[0] / 8.0)
    # periodic-shift extension: X(u + 1) - X(u) is constant in u
    shift = w.grid_value(np.arange(0, 64) + 64) - w.grid_value(np.arange(0, 64))
    assert np.allclose(shift, shift[0])


def test_drift_is_window_average_of_disorder():
    N, eps = 200, 0.05
    d = gen_disorder(11, N)
    env = epsilon_drift(build_walk(d, N), eps)
    m = window_halfwidth(N, eps)
    r = d.values[:N]
    for k in (1, 50, 200):
        idx = (np.arange(k - m, k + m + 1) - 1) % N
        assert np.isclose(env.q[k - 1], r[idx].sum() / (2 * m + 1))
    assert np.isclose(env.sup_scaled, np.max(np.sqrt(N) * np.abs(env.q)))


def test_window_errors():
    with pytest.raises(ValueError):
        window_halfwidth(5, 0.1)
    with pytest.raises(ValueError):
        window_halfwidth(100, 1.5)


def test_zero_drift_and_admissibility():
    env = DriftField.zero(16)
    assert env.admissible and np.all(env.p_right == 0.5)
    bad = DriftField.from_q(np.full(4, 1.5))
    assert not bad.admissible
    with pytest.raises(ValueError):
        bad.check_admissible()


def test_w_prime_eps_is_periodic_and_matches_drift():
    N, eps = 4096, 0.1
    env = quenched_drift(7, "rademacher", N, eps)
    x = np.array([0.1, 0.37, 0.9])
    assert np.allclose(w_prime_eps(env.walk, eps, x), w_prime_eps(env.walk, eps, x + 1.0))
    # sqrt(N) q_k approximates W'_eps at k/N
    k = (x * N).astype(int)
    approx = np.sqrt(N) * env.q[k - 1]
    assert np.max(np.abs(approx - w_prime_eps(env.walk, eps, k / N))) < 0.1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), N=st.integers(20, 400), eps=st.floats(0.05, 0.3))
def test_drift_bounded_by_disorder(seed, N, eps):
    env = quenched_drift(seed, "uniform:0.7", N, eps)
    law = DisorderLaw.parse("uniform:0.7")
    # q_k is a window mean of r / sigma
    assert np.all(np.abs(env.q) <= law.bound / law.sigma + 1e-12)
    assert env.q.size == N
