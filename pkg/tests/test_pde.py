import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinai_zrp.environment import quenched_drift, w_prime_eps
from sinai_zrp.invariant_measure import cell_averages, solve_fugacities, scale_to_mass
from sinai_zrp.pde import l1_distance, solve_pde, stationary_profile, trig_tests, weak_residual
from sinai_zrp.rates import preset
from sinai_zrp.zero_range import DensityField

LIN = preset("linear")
G5 = preset("kplusmin5")


def heat_cells(M, t):
    # cell averages of 1 + e^{-2 pi^2 t} cos(2 pi x)
    e = np.arange(M + 1) / M
    avg = (np.sin(2 * np.pi * e[1:]) - np.sin(2 * np.pi * e[:-1])) / (2 * np.pi) * M
    return 1.0 + np.exp(-2 * np.pi**2 * t) * avg


def test_heat_equation_against_closed_form():
    M, t = 512, 0.1
    traj = solve_pde(heat_cells(M, 0.0), 0.0, LIN, t)
    err = np.max(np.abs(traj.fields[-1].values - heat_cells(M, t)))
    assert err <= 1e-3 and traj.mass_drift <= 1e-12


def test_heat_convergence_order():
    errs = []
    for M in (128, 256, 512):
        traj = solve_pde(heat_cells(M, 0.0), 0.0, LIN, 0.05)
        errs.append(np.max(np.abs(traj.fields[-1].values - heat_cells(M, 0.05))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_snapshots_land_exactly():
    traj = solve_pde(heat_cells(128, 0.0), 0.0, LIN, 0.05, snapshots=[0.01, 0.033])
    assert np.array_equal(traj.times, [0.0, 0.01, 0.033, 0.05])
    assert len(traj.fields) == 4


def test_input_validation():
    with pytest.raises(ValueError):
        solve_pde(np.ones(100), 0.0, LIN, 0.1)
    with pytest.raises(ValueError):
        solve_pde(np.ones(128), 0.0, LIN, 0.1, flux="lax")
    with pytest.raises(ValueError):
        solve_pde(-np.ones(128), 0.0, LIN, 0.1)
    with pytest.raises(ValueError):
        solve_pde(np.ones(128), 0.0, LIN, 0.1, cfl=0.9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), amp=st.floats(0.0, 0.9), flux=st.sampled_from(["upwind", "central"]))
def test_mass_conservation_and_positivity(seed, amp, flux):
    M = 128
    rng = np.random.default_rng(seed)
    rho0 = 1.0 + amp * np.sin(2 * np.pi * (np.arange(M) + 0.5) / M + rng.uniform(0, 6))
    drift = rng.uniform(-3, 3, M)
    traj = solve_pde(rho0, drift, G5, 0.02, flux=flux)
    assert traj.mass_drift <= 1e-12
    assert np.all(traj.fields[-1].values >= -1e-12)


def test_weak_residual_oracles():
    T = 0.05
    tests = trig_tests(T)
    # constant solution of the heat equation
    traj = solve_pde(np.ones(256), 0.0, LIN, T, snapshots=np.linspace(0, T, 201))
    assert np.max(np.abs(weak_residual(traj, tests))) < 1e-12
    # the exact heat solution injected on a fine time grid
    times = np.linspace(0, T, 2001)
    fields = np.array([heat_cells(256, t) for t in times])
    traj2 = solve_pde(heat_cells(256, 0.0), 0.0, LIN, T)
    assert np.max(np.abs(weak_residual(traj2, tests, times=times, fields=fields))) < 1e-5


def test_rough_drift_weak_residual_refines():
    env = quenched_drift(7, "rademacher", 4096, 0.1)
    drift = lambda x: w_prime_eps(env.walk, 0.1, x)  # noqa: E731
    T = 0.02
    res = []
    for M in (128, 512):
        f0 = cell_averages(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), M)
        traj = solve_pde(f0, drift, LIN, T, snapshots=np.linspace(0, T, 401), flux="central")
        res.append(np.max(np.abs(weak_residual(traj, trig_tests(T)))))
    assert res[1] < res[0] / 4


def test_long_time_limit_is_stationary_profile():
    env = quenched_drift(7, "rademacher", 4096, 0.1)
    drift = lambda x: w_prime_eps(env.walk, 0.1, x)  # noqa: E731
    M = 512
    f0 = cell_averages(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), M)
    traj = solve_pde(f0, drift, LIN, 2.0, flux="central")
    stat, _, _ = stationary_profile(drift, 1.0, LIN, M=M)
    assert l1_distance(traj.fields[-1], stat) < 1e-2


@pytest.mark.parametrize("g", [LIN, G5], ids=["linear", "kplusmin5"])
def test_discrete_invariant_profile_approaches_continuum(g):
    gaps = []
    for N in (512, 4096, 32768):
        env = quenched_drift(7, "rademacher", N, 0.1)
        _, rho_d = scale_to_mass(solve_fugacities(env).phi, g, 1.0)
        drift = lambda x, e=env: w_prime_eps(e.walk, 0.1, x)  # noqa: E731
        stat, _, _ = stationary_profile(drift, 1.0, g, M=N)
        gaps.append(np.mean(np.abs(rho_d - stat.values)))
    assert gaps[0] > gaps[1] > gaps[2]
