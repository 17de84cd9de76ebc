import math

import numpy as np
import pytest
from scipy.stats import kstest

from sinai_zrp.brox import (
    BrownianDriver,
    Potential,
    SiteEnvironment,
    WindowExhausted,
    brox_from_driver,
    brox_sample,
    scaled_potential,
    seignourel_sample,
    seignourel_walk_sample,
    sinai_walk,
    walk_law,
)
from sinai_zrp.environment import DisorderLaw, gen_disorder

KS95 = 1.36  # asymptotic 5% critical value of sqrt(n) * KS


def test_simple_and_degenerate_walks():
    x = np.array([sinai_walk(SiteEnvironment.constant(0.5), 400, s, record_every=400)[-1]
                  for s in range(2000)])
    assert abs(x.mean()) < 3 * math.sqrt(400 / 2000)
    assert abs(x.var() - 400) < 3 * 400 * math.sqrt(2 / 2000)
    path = sinai_walk(SiteEnvironment.constant(1.0), 50, 0)
    assert np.array_equal(path, np.arange(51))


def test_sinai_slowdown():
    # environments averaged: |U_n| grows like (log n)^2, far slower than sqrt(n)
    law = DisorderLaw()
    by_log, by_sqrt = [], []
    for n in (1000, 10_000, 100_000):
        x = np.array([sinai_walk(SiteEnvironment(s, law, 0.4), n, s + 999, record_every=n)[-1]
                      for s in range(200)])
        m = np.median(np.abs(x))
        by_log.append(m / math.log(n) ** 2)
        by_sqrt.append(m / math.sqrt(n))
    assert max(by_log) < 2 * min(by_log)
    assert by_sqrt[0] > by_sqrt[1] > by_sqrt[2]


def test_potential_of_environment():
    env = SiteEnvironment.seignourel(gen_disorder(7, 10), 100)
    V = env.potential(-5, 5)
    u = env.u(-4, 5)
    assert V[5] == 0.0
    assert np.allclose(np.diff(V), np.log((1 - u) / u))


def test_walk_law_matches_dense_power():
    env = SiteEnvironment.seignourel(gen_disorder(7, 10), 30)
    n, L = 60, 70
    u = env.u(-L, L)
    P = np.zeros((2 * L + 1, 2 * L + 1))
    for i in range(2 * L + 1):
        if i + 1 <= 2 * L:
            P[i, i + 1] = u[i]
        if i >= 1:
            P[i, i - 1] = 1 - u[i]
    v = np.zeros(2 * L + 1)
    v[L] = 1.0
    v = v @ np.linalg.matrix_power(P, n)
    _, p, lost = walk_law(env, n, L)
    assert np.max(np.abs(p - v)) < 1e-13 and lost < 1e-12


def test_seignourel_law_matches_walk():
    d = gen_disorder(7, 10)
    rng = np.random.default_rng(0)
    a = seignourel_sample(d, 30, 1.0, rng, size=3000)
    b = seignourel_walk_sample(d, 30, 1.0, rng, size=3000)
    assert kstest(a, b).statistic < KS95 * math.sqrt(2 / 3000)
    assert np.all(seignourel_sample(d, 50, 0.0, rng, size=5) == 0.0)


def test_zero_disorder_seignourel_is_gaussian():
    d = gen_disorder(1, 10, "zero")
    x = seignourel_sample(d, 1000, 1.0, np.random.default_rng(1), size=2000)
    assert kstest(x, "norm").statistic < 0.05


def test_brox_zero_potential_is_the_driver():
    drv = BrownianDriver(3, 1e-3, 4.0)
    pot = Potential.from_callable(lambda x: 0 * x, 30, 0.01)
    for t in (0.25, 0.5, 1.0, 1.2345, 2.0):
        assert abs(brox_from_driver(pot, drv, t) - drv.at(t)) < 1e-9  # clock roundoff only
    x = brox_sample(pot, 1.0, np.random.default_rng(2), size=2000, hx=0.02)
    assert kstest(x, "norm").statistic < KS95 / math.sqrt(2000)


def test_brox_linear_potential_oracle():
    # W(x) = x: A(y) = e^y - 1, A^{-1}(b) = log(1 + b), int e^{-W} = 1 - e^{-x}
    drv = BrownianDriver(5, 1e-4, 2.0)
    pot = Potential.from_callable(lambda x: x, 8, 1e-3)
    B = drv.B[: np.argmax(drv.B <= -0.99) or None]
    X = np.log1p(B)
    C = 1 - np.exp(-X)
    rate = np.diff(C) / np.diff(B)
    T = np.concatenate(([0.0], np.cumsum(rate * drv.dt_b)))
    for t in (0.1, 0.3, 0.2345):
        j = np.searchsorted(T, t) - 1
        expected = -np.log(1 - (C[j] + (t - T[j]) * (B[j + 1] - B[j]) / drv.dt_b))
        assert abs(brox_from_driver(pot, drv, t) - expected) < 1e-6
    x = np.linspace(-3, 3, 13)
    assert np.allclose(pot.a(x), np.expm1(x), atol=1e-12)
    assert np.allclose(pot.a_inv(pot.a(x)), x, atol=1e-12)


def test_scale_and_clock_tables_are_monotone():
    pot = scaled_potential(gen_disorder(7, 10), 1000)
    # increments can underflow far from the origin, so strictness is checked near it
    for F in (pot.A, pot.C):
        assert np.all(np.diff(F) >= 0)
        mid = len(F) // 2
        assert np.all(np.diff(F[mid - 500: mid + 500]) > 0)
    with pytest.raises(WindowExhausted):
        pot.a_inv(pot.A[-1] + 1.0)


def test_driver_refinement_is_the_same_path():
    drv = BrownianDriver(9, 0.01, 1.0)
    fine = drv.refined()
    assert np.array_equal(fine.B[::2], drv.B) and fine.dt_b == 0.005
    again = BrownianDriver(9, 0.01, 1.0)
    assert np.array_equal(again.B, drv.B) and drv.B[0] == 0.0


def test_brox_resolution_doubling_is_within_tolerance():
    pot = Potential.from_callable(lambda x: 1.5 * np.sin(2 * x), 20, 1e-3)
    n = 2000
    a = brox_sample(pot, 1.0, np.random.default_rng(1), size=n, hx=0.02)
    b = brox_sample(pot, 1.0, np.random.default_rng(2), size=n, hx=0.01)
    assert kstest(a, b).statistic < 2 * KS95 * math.sqrt(2 / n)


def test_trap_localization():
    pot = Potential.from_callable(lambda x: -4.0 * np.exp(-((x - 1.0) ** 2) / 0.05), 20, 1e-3)
    rng = np.random.default_rng(4)
    near = [np.mean(np.abs(brox_sample(pot, t, rng, size=1000, hx=0.02) - 1.0) < 0.3)
            for t in (0.5, 4.0)]
    assert near[1] > near[0] + 0.1


def test_window_exhaustion_is_reported():
    pot = Potential.from_callable(lambda x: 0 * x, 0.5, 0.01)
    with pytest.raises(WindowExhausted):
        brox_sample(pot, 4.0, np.random.default_rng(0), size=50, hx=0.05)
