"""Scaling profiles ``ell`` and the scale functions K, L, h built from them.

For a profile ``ell`` on (0, inf) the scale functions are

    K(r) = r^-2 * int_0^r s ell(1/s) ds,
    L(r) = int_r^inf s^-1 ell(1/s) ds,
    h(r) = K(r) + L(r),

and ``h`` is strictly decreasing because h'(r) = -2 K(r) / r.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .quadrature import QuadratureError, adaptive_quad, gauss_legendre

__all__ = [
    "Regime",
    "ScalingProfile",
    "ScaleTriple",
    "RangeError",
    "UnsupportedRegimeError",
    "R_MIN",
    "R_MAX",
    "make_profile",
    "eval_K",
    "eval_L",
    "eval_h",
    "h_inverse",
    "ell_star_and_inverse",
    "theta",
    "classify_regime",
    "scaling_certificate",
]

R_MIN = 1e-8
R_MAX = 1e8
QUAD_RTOL = 1e-8
QUAD_ATOL = 1e-14


class RangeError(ValueError):
    """Requested value lies outside the attainable range of a monotone map."""


class UnsupportedRegimeError(ValueError):
    pass


class Regime(str, enum.Enum):
    BOUNDED_ELL = "bounded_ell"                      # ell bounded at infinity
    UNBOUNDED_COMPARABLE_H = "unbounded_comparable_h"  # h(r) ~ ell(1/r), r <= 1
    UNBOUNDED_EXP_CONDITION = "unbounded_exp_condition"  # sup h exp(-a h/ell) < inf
    INCONCLUSIVE = "inconclusive"

    @property
    def unbounded(self):
        return self in (Regime.UNBOUNDED_COMPARABLE_H, Regime.UNBOUNDED_EXP_CONDITION)


@dataclass(frozen=True)
class ScalingProfile:
    """A continuous positive profile ``ell`` with its scaling data.

    ``delta`` holds (delta1, delta2) for the ratio bounds on [1, inf) and
    (delta3, delta4) for those on (0, 1]; ``scale_constants`` holds (C1, C2).
    """

    name: str
    ell: Callable[[np.ndarray], np.ndarray]
    delta: tuple
    scale_constants: tuple = (1.0, 1.0)
    regime: Optional[Regime] = None
    K_closed: Optional[Callable] = None
    L_closed: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    breakpoints: tuple = ()

    def __post_init__(self):
        d1, d2, d3, d4 = self.delta
        if not (0 <= d1 <= d2 < 2 and 0 < d3 <= d4 < 2):
            raise ValueError(f"scaling exponents {self.delta} violate 0<=d1<=d2<2, 0<d3<=d4<2")

    def __call__(self, r):
        return self.ell(np.asarray(r, dtype=float))

    def to_dict(self):
        return {"name": self.name, "delta": list(self.delta),
                "scale_constants": list(self.scale_constants),
                "regime": self.regime.value if self.regime else None,
                "params": dict(self.params)}


def _power_K(alpha):
    return lambda r: np.asarray(r, dtype=float) ** (-alpha) / (2.0 - alpha)


def _power_L(alpha):
    return lambda r: np.asarray(r, dtype=float) ** (-alpha) / alpha


def _truncated_K(alpha):
    def K(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            big = r ** -2.0 * (0.5 + (r ** (2.0 - alpha) - 1.0) / (2.0 - alpha))
        return np.where(r <= 1.0, 0.5, big)
    return K


def _truncated_L(alpha):
    def L(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            small = np.log(1.0 / r) + 1.0 / alpha
        return np.where(r >= 1.0, r ** (-alpha) / alpha, small)
    return L


def make_profile(family: str, alpha: float = 1.0, ell=None, delta=None, name=None,
                 breakpoints=()):
    """Build one of the standard profiles.

    ``power``      ell(r) = r^alpha            (stable kernels)
    ``truncated``  ell(r) = min(r^alpha, 1)
    ``log``        ell(r) = log(1 + r^alpha)
    ``custom``     user supplied ``ell`` and ``delta``
    """
    family = family.lower()
    if family in ("power", "stable"):
        _check_alpha(alpha)
        return ScalingProfile(
            name=name or f"power(alpha={alpha:g})",
            ell=lambda r, a=alpha: np.asarray(r, dtype=float) ** a,
            delta=(alpha, alpha, alpha, alpha),
            regime=Regime.UNBOUNDED_COMPARABLE_H,
            K_closed=_power_K(alpha), L_closed=_power_L(alpha),
            params={"family": "power", "alpha": alpha})
    if family == "truncated":
        _check_alpha(alpha)
        return ScalingProfile(
            name=name or f"truncated(alpha={alpha:g})",
            ell=lambda r, a=alpha: np.minimum(np.asarray(r, dtype=float) ** a, 1.0),
            delta=(0.0, 0.0, alpha, alpha),
            regime=Regime.BOUNDED_ELL,
            K_closed=_truncated_K(alpha), L_closed=_truncated_L(alpha),
            params={"family": "truncated", "alpha": alpha}, breakpoints=(1.0,))
    if family == "log":
        _check_alpha(alpha)
        return ScalingProfile(
            name=name or f"log(alpha={alpha:g})",
            ell=lambda r, a=alpha: np.log1p(np.asarray(r, dtype=float) ** a),
            delta=(0.0, 1.0, alpha, alpha),
            regime=Regime.UNBOUNDED_EXP_CONDITION,
            # log(1+R^a)/log(1+r^a) >= 1 on [1, inf) and <= ... ; C1 from (R/r)^a
            # comparison near zero where log(1+x) ~ x.
            scale_constants=(math.log(2.0), 1.0 / math.log(2.0)),
            params={"family": "log", "alpha": alpha})
    if family == "custom":
        if ell is None or delta is None:
            raise ValueError("custom profile needs ell and delta")
        return ScalingProfile(name=name or "custom", ell=ell, delta=tuple(delta),
                              params={"family": "custom"}, breakpoints=tuple(breakpoints))
    raise ValueError(f"unknown profile family {family!r}")


def _check_alpha(alpha):
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")


# --------------------------------------------------------------------------
# direct quadrature of K and L


def _k_integrand(profile):
    # s ell(1/s) ds with s = e^v  ->  e^{2v} ell(e^{-v}) dv
    return lambda v: np.exp(2.0 * v) * profile(np.exp(-v))


def _l_integrand(profile):
    # s^-1 ell(1/s) ds with s = e^v  ->  ell(e^{-v}) dv
    return lambda v: profile(np.exp(-v))


def _power_tail(f, v_end, direction):
    """Tail of int f(v) dv beyond ``v_end`` assuming f is locally exponential."""
    h = 0.5
    f0 = float(f(np.array([v_end]))[0])
    f1 = float(f(np.array([v_end + direction * h]))[0])
    if f0 <= 0.0:
        return 0.0, 0.0
    if f1 <= 0.0:
        return 0.0, 0.0
    rate = -math.log(f1 / f0) / h        # f ~ f0 exp(-rate * |v - v_end|)
    return f0, rate


def _integrate_semi_infinite(f, v_start, direction, rel=1e-10, label="", kinks=()):
    """int over [v_start, +-inf) of a positive, eventually exponentially decaying f."""
    total = 0.0
    step = 2.0 * math.log(10.0)
    v = v_start
    for _ in range(400):
        nxt = v + direction * step
        piece = adaptive_quad(f, min(v, nxt), max(v, nxt), rtol=QUAD_RTOL, atol=QUAD_ATOL,
                              breakpoints=kinks, min_panels=8)
        total += piece
        v = nxt
        f0, rate = _power_tail(f, v, direction)
        if rate > 0 and f0 / rate <= rel * max(total, 1e-300):
            return total + f0 / rate
        if abs(v - v_start) > 1400:
            break
    where = f"(0, {math.exp(-abs(v)):.3g}]" if label == "K" else f"[{math.exp(abs(v)):.3g}, inf)"
    raise QuadratureError(
        f"{label} integral does not converge on subinterval {where}: integrand does not decay "
        "(check delta4 < 2 / integrable tail)", where)


def eval_K(profile: ScalingProfile, r, use_closed_form=True):
    """K(r) = r^-2 int_0^r s ell(1/s) ds."""
    r = float(r)
    if r <= 0:
        raise ValueError("r must be positive")
    if use_closed_form and profile.K_closed is not None:
        return float(profile.K_closed(r))
    f = _k_integrand(profile)
    # integrate in v from log(r) down to -inf
    # ell(e^{w}) has its kinks at w = log(breakpoint)
    kinks = [math.log(p) for p in profile.breakpoints]
    total = _integrate_semi_infinite(lambda v: f(-v), -math.log(r), +1, label="K", kinks=kinks)
    return total / (r * r)


def eval_L(profile: ScalingProfile, r, use_closed_form=True):
    """L(r) = int_r^inf s^-1 ell(1/s) ds."""
    r = float(r)
    if r <= 0:
        raise ValueError("r must be positive")
    if use_closed_form and profile.L_closed is not None:
        return float(profile.L_closed(r))
    kinks = [-math.log(p) for p in profile.breakpoints]
    return _integrate_semi_infinite(_l_integrand(profile), math.log(r), +1, label="L",
                                    kinks=kinks)


def eval_h(profile: ScalingProfile, r, use_closed_form=True):
    return eval_K(profile, r, use_closed_form) + eval_L(profile, r, use_closed_form)


# --------------------------------------------------------------------------
# tabulated triple


_TABLE_PER_DECADE = 64
_ELL_STAR_PER_DECADE = 2 ** 12
_ELL_STAR_EPS = 1e-9


class ScaleTriple:
    """K, L, h, h^-1 and the increasing envelope ell* of a profile.

    K and L are tabulated on a log grid over [R_MIN, R_MAX] by cumulative
    Gauss--Legendre sums and interpolated by cubic Hermite polynomials in
    log-log coordinates using the exact derivatives

        r K'(r) = -2 K(r) + ell(1/r),     r L'(r) = -ell(1/r).

    Outside the grid the values are extrapolated with the end slopes and
    flagged by :meth:`in_range`.
    """

    def __init__(self, profile: ScalingProfile, per_decade: int = _TABLE_PER_DECADE):
        self.profile = profile
        decades = math.log10(R_MAX / R_MIN)
        n = int(round(decades * per_decade)) + 1
        self._logr = np.linspace(math.log(R_MIN), math.log(R_MAX), n)
        r = np.exp(self._logr)
        K0 = eval_K(profile, R_MIN)
        LN = eval_L(profile, R_MAX)
        x, w = gauss_legendre(20)
        a, b = self._logr[:-1], self._logr[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        v = mid[:, None] + half[:, None] * x[None, :]
        ell_inv = profile(np.exp(-v))
        k_cells = half * ((np.exp(2 * v) * ell_inv) @ w)
        l_cells = half * (ell_inv @ w)
        self._kink_cells = {}
        for p in profile.breakpoints:
            c = -math.log(p)
            i = int(np.searchsorted(self._logr, c)) - 1
            if 0 <= i < a.size and a[i] < c < b[i]:
                self._kink_cells[i] = c
                k_cells[i] = adaptive_quad(lambda x: np.exp(2 * x) * profile(np.exp(-x)),
                                           a[i], b[i], breakpoints=(c,), rtol=1e-13)
                l_cells[i] = adaptive_quad(lambda x: profile(np.exp(-x)), a[i], b[i],
                                           breakpoints=(c,), rtol=1e-13)
        k_cum = np.concatenate([[K0 * R_MIN ** 2], K0 * R_MIN ** 2 + np.cumsum(k_cells)])
        l_cum = np.concatenate([LN + np.cumsum(l_cells[::-1])[::-1], [LN]])
        self._K = k_cum / r ** 2
        self._L = l_cum
        self._k_cum = k_cum
        ell_at = profile(1.0 / r)
        self._logK = np.log(self._K)
        self._logL = np.log(self._L)
        self._dK = (-2.0 * self._K + ell_at) / self._K
        self._dL = -ell_at / self._L
        h = self._K + self._L
        self._logh = np.log(h)
        self._dh = -2.0 * self._K / h

    # -- interpolation helpers -------------------------------------------------
    def _hermite(self, logr, y, dy):
        logr = np.asarray(logr, dtype=float)
        g = self._logr
        step = g[1] - g[0]
        idx = np.clip(((logr - g[0]) / step).astype(int), 0, g.size - 2)
        t = (logr - g[idx]) / step
        y0, y1 = y[idx], y[idx + 1]
        m0, m1 = dy[idx] * step, dy[idx + 1] * step
        t2, t3 = t * t, t * t * t
        val = ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0
               + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1)
        lo = logr < g[0]
        hi = logr > g[-1]
        val = np.where(lo, y[0] + dy[0] * (logr - g[0]), val)
        val = np.where(hi, y[-1] + dy[-1] * (logr - g[-1]), val)
        return val

    def in_range(self, r):
        r = np.asarray(r, dtype=float)
        return (r >= R_MIN) & (r <= R_MAX)

    def _patch_kinks(self, r, val, which):
        # the Hermite interpolant is only C^1-accurate; redo cells holding a kink
        if not self._kink_cells:
            return val
        r = np.asarray(r, dtype=float)
        logr = np.log(r)
        out = np.array(val, dtype=float, copy=True)
        ell_w = lambda x: self.profile(np.exp(-x))
        for i, c in self._kink_cells.items():
            a = self._logr[i]
            sel = (logr > a) & (logr < self._logr[i + 1])
            for idx in zip(*np.nonzero(sel)) if out.ndim else ([()] if sel else []):
                x = float(logr[idx])
                k = (self._k_cum[i] + adaptive_quad(lambda y: np.exp(2 * y) * ell_w(y), a, x,
                                                    breakpoints=(c,), rtol=1e-13)) / r[idx] ** 2
                l = self._L[i] - adaptive_quad(ell_w, a, x, breakpoints=(c,), rtol=1e-13)
                out[idx] = {"K": k, "L": l, "h": k + l}[which]
        return out

    def K(self, r):
        v = np.exp(self._hermite(np.log(r), self._logK, self._dK))
        return self._patch_kinks(r, v, "K")

    def L(self, r):
        v = np.exp(self._hermite(np.log(r), self._logL, self._dL))
        return self._patch_kinks(r, v, "L")

    def h(self, r):
        v = np.exp(self._hermite(np.log(r), self._logh, self._dh))
        return self._patch_kinks(r, v, "h")

    @property
    def h_range(self):
        return float(np.exp(self._logh[-1])), float(np.exp(self._logh[0]))

    def h_inverse(self, u):
        """Inverse of the (strictly decreasing) tabulated h."""
        return _vectorize_scalar(self._h_inverse_scalar, u)

    def _h_inverse_scalar(self, u):
        lo_val, hi_val = self.h_range
        if not (lo_val <= u <= hi_val):
            raise RangeError(f"h^-1({u:.6g}) outside attainable range [{lo_val:.6g}, {hi_val:.6g}]"
                             f" of h on [{R_MIN:g}, {R_MAX:g}]")
        target = math.log(u)
        # logh is decreasing in logr
        j = int(np.searchsorted(-self._logh, -target))
        # one extra cell each side: targets on a knot may round across it
        a = self._logr[max(j - 2, 0)]
        b = self._logr[min(j + 1, self._logr.size - 1)]
        return math.exp(_bisect_secant(
            lambda x: math.log(float(self.h(math.exp(x)))) - target, a, b, tol=1e-11))

    # -- increasing envelope --------------------------------------------------
    @cached_property
    def _ell_star_table(self):
        n = int(round(math.log10(R_MAX / R_MIN) * _ELL_STAR_PER_DECADE)) + 1
        logr = np.linspace(math.log(R_MIN), math.log(R_MAX), n)
        vals = self.profile(np.exp(logr))
        running = np.maximum.accumulate(vals)
        decades = (logr - logr[0]) / math.log(10.0)
        star = running * (1.0 + _ELL_STAR_EPS * decades)
        return logr, vals, running, star

    def ell_bar(self, r):
        """Running supremum sup_{s <= r} ell(s), exact up to the grid cell."""
        logr, vals, running, _ = self._ell_star_table
        x = np.log(np.asarray(r, dtype=float))
        idx = np.clip(np.searchsorted(logr, x, side="right") - 1, 0, logr.size - 1)
        return np.maximum(running[idx], self.profile(np.exp(x)))

    def ell_star(self, r):
        logr, _, _, _ = self._ell_star_table
        x = np.log(np.asarray(r, dtype=float))
        decades = (x - logr[0]) / math.log(10.0)
        return self.ell_bar(np.exp(x)) * (1.0 + _ELL_STAR_EPS * decades)

    @cached_property
    def C3(self):
        """Observed sup of ell*/ell over the envelope grid."""
        logr, vals, _, star = self._ell_star_table
        return float(np.max(star / vals))

    def ell_inverse(self, u):
        return _vectorize_scalar(self._ell_inverse_scalar, u)

    def _ell_inverse_scalar(self, u):
        logr, _, _, star = self._ell_star_table
        if not (star[0] <= u <= star[-1]):
            raise RangeError(f"ell^-1({u:.6g}) outside attainable range "
                             f"[{star[0]:.6g}, {star[-1]:.6g}] of ell* on [{R_MIN:g}, {R_MAX:g}]")
        j = int(np.searchsorted(star, u))
        a, b = logr[max(j - 2, 0)], logr[min(j + 1, logr.size - 1)]
        target = math.log(u)
        return math.exp(_bisect_secant(
            lambda x: math.log(float(self.ell_star(math.exp(x)))) - target, a, b, tol=1e-12))


def _vectorize_scalar(fn, u):
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0:
        return fn(float(arr))
    return np.array([fn(float(x)) for x in arr.ravel()]).reshape(arr.shape)


def _bisect_secant(f, a, b, tol=1e-12, maxiter=200):
    """Root of a monotone ``f`` bracketed by [a, b]: bisection, then one secant step."""
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if fa * fb > 0:
        raise RangeError("root not bracketed")
    for _ in range(maxiter):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0:
            return m
        if fa * fm < 0:
            b, fb = m, fm
        else:
            a, fa = m, fm
        if b - a < 1e-9:
            break
    # secant polish inside the final bracket
    x = a - fa * (b - a) / (fb - fa)
    return x if a <= x <= b else 0.5 * (a + b)


# --------------------------------------------------------------------------
# module level operations


def h_inverse(triple: ScaleTriple, u):
    return triple.h_inverse(u)


def ell_star_and_inverse(profile: ScalingProfile, triple: Optional[ScaleTriple] = None):
    """Return ``(ell_star, ell_inverse)`` callables for an unbounded profile."""
    regime = profile.regime or classify_regime(profile)["regime"]
    regime = Regime(regime)
    if regime == Regime.BOUNDED_ELL:
        raise UnsupportedRegimeError(
            f"profile {profile.name} is bounded at infinity; ell* and its inverse need an "
            "unbounded profile")
    triple = triple or ScaleTriple(profile)
    return triple.ell_star, triple.ell_inverse


def theta(a, r, t, triple: ScaleTriple):
    """theta_a(r, t) = max(r, 1 / ell^-1(a / t))."""
    if a <= 0 or t <= 0:
        raise ValueError("a and t must be positive")
    thr = 1.0 / np.asarray(triple.ell_inverse(a / np.asarray(t, dtype=float)))
    return np.maximum(np.asarray(r, dtype=float), thr)


def scaling_certificate(profile: ScalingProfile, per_decade=16):
    """Observed C1, C2 of the two-sided ratio bounds on [1, 1e3] and [1e-3, 1]."""
    d1, d2, d3, d4 = profile.delta
    out = {}
    for label, lo, hi, dl, du in (("large", 1.0, 1e3, d1, d2), ("small", 1e-3, 1.0, d3, d4)):
        r = np.geomspace(lo, hi, int(per_decade * math.log10(hi / lo)) + 1)
        ell = profile(r)
        i, j = np.triu_indices(r.size)
        ratio = ell[j] / ell[i]
        q = r[j] / r[i]
        out[label] = {"C1": float(np.min(ratio / q ** dl)), "C2": float(np.max(ratio / q ** du))}
    C1 = min(out["large"]["C1"], out["small"]["C1"])
    C2 = max(out["large"]["C2"], out["small"]["C2"])
    return {"C1": C1, "C2": C2, "detail": out}


def classify_regime(profile: ScalingProfile, triple: Optional[ScaleTriple] = None):
    """Desk-scale regime test; returns a JSON-ready certificate.

    (i)    ell bounded on [1, 1e6]: growth of the running max over the last
           three decades below 5 %.
    (ii-1) h(r)/ell(1/r) stays in a bounded window on [1e-6, 1] and has
           stopped drifting over the last two decades.
    (ii-2) sup_r h(r) exp(-a h(r)/ell(1/r)) for a in {1, 4, 16} is attained
           away from the small-r end of the grid.
    """
    triple = triple or ScaleTriple(profile)
    big = np.geomspace(1.0, 1e6, 97)
    ell_big = np.maximum.accumulate(profile(big))
    growth = float(ell_big[-1] / ell_big[48])
    cert = {"profile": profile.name, "grid": {"ell_bounded": [1.0, 1e6],
                                             "small_r": [1e-6, 1.0]},
            "constants": {"ell_growth_last3_decades": growth}}
    if growth < 1.05:
        cert.update(regime=Regime.BOUNDED_ELL.value, max_ratio=float(ell_big[-1]))
        return cert
    r = np.geomspace(1e-6, 1.0, 97)
    ratio = triple.h(r) / profile(1.0 / r)
    cmin, cmax = float(ratio.min()), float(ratio.max())
    drift = float(ratio[0] / ratio[32])         # r = 1e-6 vs r = 1e-4
    cert["constants"].update(ratio_min=cmin, ratio_max=cmax, ratio_drift_last2=drift)
    if cmax / cmin <= 4.0 and abs(drift - 1.0) <= 0.1:
        cert.update(regime=Regime.UNBOUNDED_COMPARABLE_H.value, max_ratio=cmax)
        return cert
    sups = {}
    interior = True
    for a in (1.0, 4.0, 16.0):
        vals = triple.h(r) * np.exp(-a * ratio)
        k = int(np.argmax(vals))
        sups[str(int(a))] = float(vals[k])
        if k == 0 or vals[0] >= vals[min(8, vals.size - 1)]:
            interior = False
    cert["constants"]["sup_h_exp"] = sups
    cert["max_ratio"] = cmax
    cert["regime"] = (Regime.UNBOUNDED_EXP_CONDITION if interior else Regime.INCONCLUSIVE).value
    return cert
