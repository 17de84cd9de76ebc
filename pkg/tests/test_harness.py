import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinai_zrp.harness import (
    AtomicMeasure,
    ExperimentConfig,
    Report,
    TestFunction,
    d_bound,
    dual_distance,
    hdl_experiment,
    martingale_diag,
    mode_integrals,
    parse_profile,
    replacement_diag,
    smooth_field,
)
from sinai_zrp.zero_range import DensityField

pos_arrays = st.lists(st.floats(0, 5, allow_nan=False), min_size=4, max_size=4)


@settings(max_examples=40, deadline=None)
@given(pos_arrays, pos_arrays, pos_arrays)
def test_dual_distance_is_a_metric(a, b, c):
    A, B, C = (DensityField(np.array(v)) for v in (a, b, c))
    assert dual_distance(A, A) == 0.0
    assert dual_distance(A, B) == pytest.approx(dual_distance(B, A), abs=1e-15)
    assert dual_distance(A, C) <= dual_distance(A, B) + dual_distance(B, C) + 1e-12
    assert 0.0 <= dual_distance(A, B) <= 1.0


def test_dual_distance_spike_against_flat():
    # a unit atom at 1/2 differs from dx only in the cosine modes, by (-1)^n
    spike = AtomicMeasure(np.array([0.5]), np.array([1.0]))
    flat = DensityField(np.ones(64))
    expected = sum(0.5 ** m for m in range(2, 21, 2))
    assert abs(dual_distance(spike, flat) - expected) < 1e-12


def test_mode_integrals_exact_for_cells():
    f = DensityField(np.array([1.0, 0.0, 0.0, 0.0]))
    I = mode_integrals(f, 3)
    assert I[0] == pytest.approx(0.25)
    assert I[1] == pytest.approx(np.sin(np.pi / 2) / (2 * np.pi))
    assert I[2] == pytest.approx((1 - np.cos(np.pi / 2)) / (2 * np.pi))
    with pytest.raises(TypeError):
        mode_integrals([1.0, 2.0])


def test_empirical_measure_and_smoothing_keep_mass():
    eta = np.array([3, 0, 1, 4])
    assert AtomicMeasure.empirical(eta).mass == pytest.approx(2.0)
    f = DensityField(np.random.default_rng(0).random(50))
    assert smooth_field(f, 0.1).mass == pytest.approx(f.mass, rel=1e-12)
    assert np.allclose(smooth_field(DensityField(np.full(20, 2.5)), 0.2).values, 2.5)


def test_profiles_and_test_functions():
    x = np.linspace(0, 1, 9)
    assert np.allclose(parse_profile("cos:0.5")(x), 1 + 0.5 * np.cos(2 * np.pi * x))
    assert np.allclose(parse_profile("const:2")(x), 2.0)
    with pytest.raises(ValueError):
        parse_profile("exp:1")
    G = TestFunction.parse("sin:2")
    assert G.sup_norms() == pytest.approx((4 * np.pi, 16 * np.pi ** 2), rel=1e-6)
    assert TestFunction.parse("const:3").sup_norms() == (0.0, 0.0)


def test_config_parsing_and_validation(tmp_path):
    cfg = ExperimentConfig.from_text("Ns = 64, 128  # sizes\nreplicas = 3\nstrict = yes\n")
    assert cfg.Ns == (64, 128) and cfg.replicas == 3 and cfg.strict is True
    with pytest.raises(ValueError):
        ExperimentConfig.from_text("bogus = 1\n")
    with pytest.raises(ValueError):
        ExperimentConfig(Ns=(8,), theta=0.05)
    with pytest.raises(ValueError):
        ExperimentConfig(drift="sideways")
    rep = Report("demo", cfg.to_dict(), [{"N": 64, "x": 1.0}], {"ok": True})
    _, js = rep.write(tmp_path)
    again = ExperimentConfig.from_file(js)
    assert again == cfg
    assert json.loads(js.read_text())["assertions"] == {"ok": True}


def _small(**kw):
    base = dict(Ns=(64, 128), replicas=3, M=128, t_obs=(0.01,), T=0.002)
    base.update(kw)
    return ExperimentConfig(**base)


def test_experiments_are_reproducible():
    a = hdl_experiment(_small())
    b = hdl_experiment(_small())
    assert a.rows == b.rows
    assert all(not r["error"] for r in a.rows)


def test_constant_profile_conserves_mass():
    rep = hdl_experiment(_small(rho0="const:1.5", replicas=2))
    for r in rep.rows:
        assert r["mass_pde"] == pytest.approx(1.5, abs=1e-12)
        assert r["mass_emp"] > 0


def test_constant_test_function_gives_zero_martingale():
    rep = martingale_diag(_small(replicas=30, G="const:2"))
    assert all(r["mean"] == 0.0 and r["var"] == 0.0 for r in rep.rows)
    with pytest.raises(ValueError):
        martingale_diag(_small(replicas=5))


def test_drift_bound_and_replacement_report():
    cfg = _small(replicas=2, thetas=(0.05, 0.1), n_time=5)
    G = TestFunction.parse(cfg.G)
    for N in cfg.Ns:
        dmax, bound = d_bound(G, cfg.environment(N))
        assert dmax <= bound
    rep = replacement_diag(cfg)
    assert len(rep.rows) == 4 and all(r["statistic"] >= 0 for r in rep.rows)


@pytest.mark.slow
def test_heat_case_approaches_pde():
    rep = hdl_experiment(ExperimentConfig(drift="zero", Ns=(128, 4096), replicas=10,
                                          M=256, t_obs=(0.05,)))
    assert rep.passed, rep.rows
