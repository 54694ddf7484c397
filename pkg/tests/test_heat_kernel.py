import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import GOLDENS, heat, kernel
from slowvary.char_exponent import CharExponent
from slowvary.heat_kernel import (BOUND_NAMES, HeatKernelField, MissingCertificateError,
                                  TimeTooSmallError, bound_ratio_table, bound_stability,
                                  dimension_shift_terms)
from slowvary.quadrature import panel_rule


def poisson(t, x):
    a = math.pi * t
    return a / (math.pi * (a * a + x * x))


def test_cauchy_origin():
    assert heat("stable").density(1.0, np.array([0.0]))[0] == pytest.approx(1 / math.pi ** 2,
                                                                          rel=1e-8)


@given(st.floats(min_value=0.3, max_value=3.0), st.floats(min_value=0.0, max_value=50.0))
def test_cauchy_density(t, x):
    got = heat("stable").density(t, np.array([x]))[0]
    assert got == pytest.approx(poisson(t, x), rel=1e-7)


def test_cauchy_first_derivative():
    H = heat("stable")
    t, x = 1.0, 1.0
    a = math.pi * t
    exact = -(1 / math.pi) * a * 2 * x / (a * a + x * x) ** 2
    assert H.deriv(1, t, np.array([x]))[0] == pytest.approx(exact, rel=1e-7)
    assert H.deriv(1, t, np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)


def test_cauchy_time_derivative():
    H = heat("stable")
    a, x = math.pi, 1.0
    exact = (x * x - a * a) / (a * a + x * x) ** 2
    assert H.applied_power(1, 1.0, np.array([x]))[0] == pytest.approx(exact, rel=1e-6)


def test_dimension_shift_bound_cauchy():
    H = heat("stable")
    x = np.geomspace(0.01, 100, 25)
    d1 = np.abs(H.deriv(1, 1.0, x))
    p3 = H.shifted_density(1, 1.0, x)
    assert np.all(d1 <= 2 * math.pi * x * p3 * (1 + 1e-8))
    # in d = 1 the identity is an equality
    assert np.allclose(d1, 2 * math.pi * x * p3, rtol=1e-6)


def test_log_origin_golden():
    assert heat("log").density(1.0, np.array([0.0]))[0] == pytest.approx(GOLDENS["p_log_1_0"],
                                                                        rel=1e-7)


@pytest.mark.parametrize("family", ["stable", "log", "truncated"])
def test_mass_is_one(family):
    assert heat(family).mass(2.5) == pytest.approx(1.0, abs=1e-6)


def test_density_positive_and_radially_decreasing():
    x = np.geomspace(0.01, 1e3, 40)
    for fam in ("stable", "log", "truncated"):
        p = heat(fam).density(2.5, x)
        assert np.all(p > 0)
        assert np.all(np.diff(p) < 0)


def test_multiplier_and_dimension_shift_routes_agree():
    H = heat("log")
    x = np.array([0.0, 0.3, 1.0, 4.0])
    for m in (1, 2):
        _, info = H.density_derivative(m, 1.0, x)
        assert not info.flagged
        assert info.discrepancy < 1e-6


def test_dimension_shift_terms_m1():
    assert dimension_shift_terms(1) == {(1, 1): -2 * math.pi}


def test_small_time_truncated():
    H = heat("truncated")
    assert H.t_min > 1.0
    with pytest.raises(TimeTooSmallError):
        H.density(0.7, np.array([0.0]))
    vals = H.density(0.7, np.array([0.5, 2.0]))
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)


def test_missing_certificate():
    H = HeatKernelField(CharExponent(kernel("perturbed", n=2)))
    with pytest.raises(MissingCertificateError):
        H.density_derivative(3, 1.0, np.array([1.0]))


def test_L2_of_second_power_scales_like_inverse_square():
    # int |L^2 p(s, y)| dy <= C s^-2 ; exact scaling for the Cauchy kernel
    H = heat("stable")
    y, w = panel_rule(np.concatenate([[0.0], np.geomspace(1e-3, 1e5, 65)]), 16)
    vals = []
    for s in (0.25, 0.5, 1.0, 2.0, 4.0):
        q2 = np.abs(H.applied_power(2, s, y))
        vals.append(s * s * 2 * float(q2 @ w))
    assert max(vals) / min(vals) == pytest.approx(1.0, abs=1e-3)
    Hl = heat("log")
    logv = [s * s * 2 * float(np.abs(Hl.applied_power(2, s, y)) @ w) for s in (1.0, 2.0, 4.0)]
    assert np.all(np.isfinite(logv)) and max(logv) < 10 * min(logv)


def test_bound_tables_finite_and_stable():
    H = heat("log")
    for name in BOUND_NAMES[:3]:
        st_ = bound_stability(H, name, [1.0, 2.0, 4.0], np.geomspace(0.1, 100, 9))
        assert st_.finite and st_.passed()
    table = bound_ratio_table(H, "offdiag", [1.0], np.geomspace(1, 100, 5))
    assert table.shape == (1, 5)


def test_theta_parameter_sweep_records_constants():
    from slowvary.heat_kernel import theta_parameter_sweep
    H = heat("log")
    res = theta_parameter_sweep(H, [1.0, 2.0], np.geomspace(0.1, 10, 5))
    assert res["a_d"] == pytest.approx(2 * res["C3"] / res["C0"])
    assert res["a"] == pytest.approx([res["a_d"], 2 * res["a_d"], 4 * res["a_d"]])
    assert all(r["finite"] for r in res["runs"])
