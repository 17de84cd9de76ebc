import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinai_zrp.rates import RateFunctionError, certify_rate_function, load_rate, preset


def test_presets_and_constants():
    g = preset("linear")
    assert g.linear_coefficient == 1.0 and g.g_star_upper == 1.0 and g.g_star_lower == 1.0
    g5 = preset("kplusmin5")
    assert g5.linear_coefficient is None
    assert np.array_equal(g5(np.arange(8)), [0, 2, 4, 6, 8, 10, 11, 12])
    assert g5.g_star_upper == 2.0 and g5.g_star_lower == 1.0
    assert g5.max_rate_per_particle == 2.0


def test_linear_continuation_and_log_factorial():
    g = preset("linear", K=4)
    assert np.array_equal(g(np.array([5, 10])), [5.0, 10.0])
    lf = g.log_factorial(6)
    assert np.allclose(np.exp(lf), [1, 1, 2, 6, 24, 120, 720])


def test_rejections():
    with pytest.raises(RateFunctionError):
        certify_rate_function([1, 2, 3])
    with pytest.raises(RateFunctionError):
        certify_rate_function([0, 1, 0, 2])
    with pytest.raises(RateFunctionError) as exc:
        certify_rate_function([0, 1, 1, 1, 1])
    assert exc.value.pair is not None


def test_load_rate_from_file(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("0 1 3 4 5")
    g = load_rate(str(p))
    assert g.table.tolist() == [0, 1, 3, 4, 5]
    with pytest.raises(KeyError):
        load_rate("nonexistent-preset")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=2, max_size=12))
def test_increasing_tables_certify(incs):
    table = np.concatenate(([0.0], np.cumsum(incs)))
    g = certify_rate_function(table)
    k = np.arange(1, 3 * table.size)
    vals = g(k)
    assert np.all(vals / k >= g.g_star_lower - 1e-12)
    assert np.all(np.abs(np.diff(g(np.arange(3 * table.size)))) <= g.g_star_upper + 1e-12)
