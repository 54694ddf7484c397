import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowvary.quadrature import (QuadratureError, adaptive_quad, gauss_legendre,
                                 geometric_edges, panel_rule, refine_edges, wynn_epsilon)


@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=30))
def test_gauss_legendre_exact_for_polynomials(coeffs):
    x, w = gauss_legendre(16)
    p = np.polynomial.Polynomial(coeffs)
    exact = p.integ()(1.0) - p.integ()(-1.0)
    assert float(w @ p(x)) == pytest.approx(exact, rel=1e-12, abs=1e-10)


@given(st.floats(min_value=0.1, max_value=50.0))
def test_adaptive_oscillatory(k):
    got = adaptive_quad(lambda x: np.cos(k * x), 0.0, math.pi, rtol=1e-11)
    assert got == pytest.approx(math.sin(k * math.pi) / k, abs=1e-10)


def test_adaptive_breakpoint_kink():
    got = adaptive_quad(lambda x: np.abs(x - 0.3), 0.0, 1.0, breakpoints=(0.3,))
    assert got == pytest.approx(0.5 * (0.09 + 0.49), rel=1e-12)


def test_adaptive_gives_up():
    with pytest.raises(QuadratureError):
        adaptive_quad(lambda x: np.sign(np.sin(1 / np.maximum(x, 1e-300))), 0.0, 1.0,
                      rtol=1e-14, atol=0.0, max_intervals=200)


def test_wynn_alternating_series():
    n = np.arange(1, 25)
    partial = np.cumsum((-1.0) ** (n + 1) / n)
    assert wynn_epsilon(partial) == pytest.approx(math.log(2), rel=1e-10)


def test_panel_helpers():
    e = geometric_edges(1e-3, 1.0, 2.0)
    assert e[0] == 1e-3 and e[-1] == pytest.approx(1.0)
    assert np.all(np.diff(refine_edges(e, 0.05)) <= 0.05 + 1e-15)
    x, w = panel_rule(e, 8)
    assert float(w @ (1 / x)) == pytest.approx(math.log(1e3), rel=1e-8)
    with pytest.raises(ValueError):
        geometric_edges(0.0, 1.0)
