import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from conftest import GOLDENS, kernel
from slowvary.jump_kernels import (BernsteinKernel, InsufficientDifferentiability, T_operator,
                                   T_power_via_coefficients, builtin_kernel, cm_coefficients,
                                   fd_derivative_jump, levy_integrability, sphere_area,
                                   stable_subordinator, subordinate_kernel, verify_H)


def test_stable_values_and_derivative():
    k = kernel("stable")
    r = np.array([0.5, 1.0, 3.0])
    assert np.allclose(k(r), r ** -2.0, rtol=1e-14)
    assert np.allclose(k.derivative(1, r), -2 * r ** -3.0, rtol=1e-14)


def test_family_values_at_one():
    assert kernel("truncated")(1.0) == pytest.approx(0.5, rel=1e-14)
    assert kernel("log", 1.0, 2)(1.0) == pytest.approx(math.log(2), rel=1e-14)


def test_truncated_closed_form():
    r = np.geomspace(1e-3, 1e3, 13)
    assert np.allclose(kernel("truncated")(r), 1 / (r * (r + 1)), rtol=1e-13)


def test_T_operator_power():
    k = kernel("stable")
    r = np.geomspace(0.1, 10, 7)
    assert np.allclose(T_operator(k, 1)(r), 2 * r ** -4.0, rtol=1e-13)
    assert np.allclose(T_operator(k, 2)(r), 8 * r ** -6.0, rtol=1e-13)
    assert T_operator(k, 2).d == 5


def test_T_operator_log_golden():
    assert T_operator(kernel("log"), 1)(1.0) == pytest.approx(GOLDENS["T_log_1"], rel=1e-12)
    assert GOLDENS["T_log_1"] == pytest.approx(math.log(2) + 0.5, rel=1e-14)


def test_cm_coefficients_small_table():
    # T^2 f = f''/r^2 - f'/r^3, so C[2] = (0, 1, 1)
    C = cm_coefficients(4)
    assert C[1] == [0, 1, 0, 0, 0]
    assert C[2] == [0, 1, 1, 0, 0]
    assert C[3] == [0, 3, 3, 1, 0]
    assert C[4] == [0, 15, 15, 6, 1]


def test_cm_coefficients_match_symbolic():
    r = sp.symbols("r", positive=True)
    f = sp.exp(-r)
    cur = f
    C = cm_coefficients(4)
    for n in range(1, 5):
        cur = sp.simplify(-sp.diff(cur, r) / r)
        table = sum(C[n][k] * (-1 / r) ** (2 * n - k) * sp.diff(f, r, k) for k in range(n + 1))
        assert sp.simplify(cur - table) == 0


@given(st.floats(min_value=0.05, max_value=20.0), st.integers(min_value=1, max_value=4))
def test_T_power_via_coefficients_matches_nesting(r, n):
    k = kernel("log")
    derivs = [k.derivative(q, np.array([r])) for q in range(n + 1)]
    via = T_power_via_coefficients(derivs, np.array([r]), n)
    nested = T_operator(k, n)(np.array([r]))
    assert via[0] == pytest.approx(nested[0], rel=1e-9)


@given(st.sampled_from(["stable", "truncated", "log"]), st.floats(min_value=0.1, max_value=1.9),
       st.floats(min_value=-3, max_value=3))
def test_kernels_positive_and_decreasing(family, alpha, logr):
    k = builtin_kernel(family, alpha, 1)
    r = np.array([10.0 ** logr])
    assert k(r)[0] > 0
    assert k.derivative(1, r)[0] < 0


def test_sphere_area():
    assert sphere_area(1) == 2.0
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_levy_integrability_finite():
    for fam in ("stable", "truncated", "log"):
        assert np.isfinite(levy_integrability(kernel(fam)))
    # stable alpha=1, d=1: 2 (int_0^1 r^2 r^-2 dr + int_1^inf r^-2 dr) = 4
    assert levy_integrability(kernel("stable")) == pytest.approx(4.0, rel=1e-8)


def test_subordinate_atom():
    sk = subordinate_kernel(BernsteinKernel(atoms=((1.0, 1.0),)), 1)
    assert sk(0.0) == pytest.approx((4 * math.pi) ** -0.5, rel=1e-14)
    assert sk(2.0) == pytest.approx((4 * math.pi) ** -0.5 * math.exp(-1), rel=1e-14)


def test_subordinate_stable_golden():
    sk = subordinate_kernel(stable_subordinator(0.5), 1)
    assert sk(1.0) == pytest.approx(GOLDENS["subordinate_half_1"], rel=1e-8)


def test_subordinate_derivatives_by_differences():
    sk = subordinate_kernel(stable_subordinator(0.5), 1)
    h = 1e-4
    for r in (0.3, 1.0, 4.0):
        fd = (sk(r + h) - sk(r - h)) / (2 * h)
        assert sk.derivative(1, r) == pytest.approx(fd, rel=1e-6)


def test_empty_levy_measure_rejected():
    with pytest.raises(ValueError):
        subordinate_kernel(BernsteinKernel(), 1)


def test_stable_certificate_constant_ratios():
    cert = verify_H(kernel("stable"), 4)
    assert cert.passed
    for lo, hi in cert.kappa:
        assert hi / lo == pytest.approx(1.0, rel=1e-10)


def test_log_certificate_passes():
    cert = verify_H(kernel("log"), 4)
    assert cert.passed
    assert all(np.isfinite(k).all() for k in cert.kappa)


def test_perturbed_low_order_fails_at_kink():
    k = kernel("perturbed", n=2)
    cert = verify_H(k, 3)
    assert not cert.passed
    assert any(f["r"] == 1.0 for f in cert.failures)
    with pytest.raises(InsufficientDifferentiability):
        k.derivative(3, 1.0)


def test_perturbed_fifth_difference_jump():
    jump, neigh = fd_derivative_jump(kernel("perturbed", n=5), order=5)
    assert jump > 10 * neigh


def test_invalid_family():
    with pytest.raises(ValueError):
        builtin_kernel("gauss", 1.0)
    with pytest.raises(ValueError):
        builtin_kernel("stable", 2.0)
