import math

import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from conftest import GOLDENS
from slowvary.scale_functions import (R_MAX, R_MIN, RangeError, Regime, ScaleTriple,
                                      UnsupportedRegimeError, classify_regime, eval_h, eval_K,
                                      eval_L, ell_star_and_inverse, make_profile,
                                      scaling_certificate, theta)

POWER1 = make_profile("power", 1.0)
POWER_HALF = make_profile("power", 0.5)
LOG1 = make_profile("log", 1.0)
TRUNC_HALF = make_profile("truncated", 0.5)
TRIPLES = {}


def triple(p):
    if p.name not in TRIPLES:
        TRIPLES[p.name] = ScaleTriple(p)
    return TRIPLES[p.name]


def test_power_closed_forms():
    assert eval_K(POWER1, 2.0) == pytest.approx(0.5, rel=1e-12)
    assert eval_K(POWER_HALF, 1.0) == pytest.approx(2 / 3, rel=1e-12)
    assert eval_L(POWER1, 2.0) == pytest.approx(0.5, rel=1e-12)
    assert eval_L(POWER1, 1.0) == pytest.approx(1.0, rel=1e-12)
    assert eval_h(POWER1, 1.0) == pytest.approx(2.0, rel=1e-12)
    assert eval_h(POWER1, 4.0) == pytest.approx(0.5, rel=1e-12)


def test_quadrature_route_matches_closed_form():
    for r in (1e-3, 0.3, 1.0, 7.0, 1e3):
        assert eval_K(POWER_HALF, r, use_closed_form=False) == pytest.approx(
            eval_K(POWER_HALF, r), rel=1e-9)
        assert eval_L(TRUNC_HALF, r, use_closed_form=False) == pytest.approx(
            eval_L(TRUNC_HALF, r), rel=1e-9)


def test_log_goldens():
    assert eval_K(LOG1, 1.0) == pytest.approx(GOLDENS["K_log_1"], rel=1e-10)
    assert eval_h(LOG1, 1.0) == pytest.approx(GOLDENS["h_log_1"], rel=1e-10)
    assert triple(LOG1).K(1.0) == pytest.approx(GOLDENS["K_log_1"], rel=1e-8)


def test_truncated_golden():
    assert eval_L(TRUNC_HALF, 0.25) == pytest.approx(GOLDENS["L_truncated_half_quarter"],
                                                      rel=1e-12)
    assert triple(TRUNC_HALF).L(0.25) == pytest.approx(GOLDENS["L_truncated_half_quarter"],
                                                        rel=1e-8)


@pytest.mark.parametrize("prof", [POWER_HALF, LOG1, TRUNC_HALF], ids=lambda p: p.name)
def test_table_matches_direct_quadrature(prof):
    tr = triple(prof)
    r = np.geomspace(1e-6, 1e6, 13)
    direct = np.array([eval_h(prof, x, use_closed_form=False) for x in r])
    assert np.allclose(tr.h(r), direct, rtol=1e-8)


def test_h_inverse_examples():
    tr = triple(POWER1)
    assert tr.h_inverse(3.0) == pytest.approx(2 / 3, rel=1e-9)
    assert tr.h_inverse(float(tr.h(5.0))) == pytest.approx(5.0, rel=1e-9)
    tl = triple(LOG1)
    assert tl.h_inverse(float(tl.h(1.0))) == pytest.approx(1.0, rel=1e-9)


@given(st.floats(min_value=-5.0, max_value=5.0))
@example(-1.0)  # lands on a table knot
def test_h_inverse_round_trip(logr):
    tr = triple(LOG1)
    r = 10.0 ** logr
    assert tr.h_inverse(float(tr.h(r))) == pytest.approx(r, rel=1e-8)


@given(st.floats(min_value=-6.0, max_value=6.0), st.floats(min_value=0.01, max_value=2.0))
def test_h_decreasing_and_K_L_relations(logr, step):
    tr = triple(TRUNC_HALF)
    r0, r1 = 10.0 ** logr, 10.0 ** (logr + step)
    assert tr.h(r1) < tr.h(r0)
    # r^2 K is nondecreasing, L is nonincreasing
    assert r1 ** 2 * tr.K(r1) >= r0 ** 2 * tr.K(r0) * (1 - 1e-12)
    assert tr.L(r1) <= tr.L(r0) * (1 + 1e-12)


def test_h_inverse_out_of_range():
    tr = triple(TRUNC_HALF)
    with pytest.raises(RangeError):
        tr.h_inverse(float(tr.h(R_MIN)) * 10)


def test_ell_star_monotone_inputs():
    tr = triple(POWER1)
    r = np.geomspace(1e-3, 1e3, 25)
    assert np.allclose(tr.ell_star(r), r, rtol=1e-7)
    assert tr.ell_inverse(2.0) == pytest.approx(2.0, rel=1e-6)
    tl = triple(LOG1)
    assert np.allclose(tl.ell_star(r), np.log1p(r), rtol=1e-7)


def test_ell_star_envelope_dominates_nonmonotone():
    prof = make_profile("custom", ell=lambda r: np.sqrt(r) * (2 + np.sin(np.log1p(r))),
                        delta=(0.5, 0.5, 0.5, 0.5), name="wiggly")
    tr = ScaleTriple(prof)
    r = np.geomspace(1e-4, 1e6, 2001)
    star = tr.ell_star(r)
    # brute-force running maximum as the oracle
    running = np.maximum.accumulate(prof(r))
    assert np.all(star >= prof(r))
    assert np.all(star >= running * (1 - 1e-12))
    assert np.all(np.diff(star) > 0)


def test_ell_star_rejects_bounded_profile():
    with pytest.raises(UnsupportedRegimeError):
        ell_star_and_inverse(TRUNC_HALF)


def test_theta_examples():
    assert theta(1.0, 0.0, 0.5, triple(POWER1)) == pytest.approx(0.5, rel=1e-6)
    assert theta(1.0, 10.0, 0.5, triple(POWER1)) == 10.0
    assert theta(2.0, 0.0, 1.0, triple(LOG1)) == pytest.approx(1 / (math.e ** 2 - 1), rel=1e-6)


def test_regime_classification():
    assert Regime(classify_regime(POWER1)["regime"]) == Regime.UNBOUNDED_COMPARABLE_H
    assert Regime(classify_regime(TRUNC_HALF)["regime"]) == Regime.BOUNDED_ELL
    assert Regime(classify_regime(make_profile("log", 0.5))["regime"]) \
        == Regime.UNBOUNDED_EXP_CONDITION


def test_stable_h_over_ell_is_two():
    tr = triple(POWER1)
    r = np.geomspace(1e-5, 1e5, 11)
    assert np.allclose(tr.h(r) / (1 / r), 2.0, rtol=1e-9)


def test_scaling_certificate_power():
    cert = scaling_certificate(POWER_HALF)
    assert cert["C1"] == pytest.approx(1.0, rel=1e-12)
    assert cert["C2"] == pytest.approx(1.0, rel=1e-12)


def test_supported_range_constants():
    assert R_MIN == 1e-8 and R_MAX == 1e8
