"""The characteristic exponent psi of a radial jump kernel.

With g(s) = s^d j(s) and u = rho s the symbol reduces to

    psi(rho) = sigma_{d-1} int_0^inf (1 - Phi_d(u)) g(u / rho) du / u,

where Phi_d(u) = Gamma(d/2) (2/u)^nu J_nu(u), nu = d/2 - 1, is the spherical
mean of cos(u e_1 . theta) (Phi_1 = cos).  The integral is split at u = 1:

* ``u <= 1`` in the variable log u, where 1 - Phi_d(u) ~ u^2 / (2d) tames the
  kernel singularity;
* ``u > 1`` as (tail mass) - (oscillatory part); the latter is summed over
  half-period panels aligned with the asymptotic zeros of Phi_d and
  accelerated with Wynn's epsilon algorithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln, jv

from .jump_kernels import JumpKernel, sphere_area
from .quadrature import QuadratureError, adaptive_quad, gauss_legendre, wynn_epsilon
from .scale_functions import ScaleTriple

__all__ = [
    "CharExponent",
    "psi",
    "psi_monte_carlo",
    "certify_psi_h",
    "one_minus_phi",
    "spherical_mean",
    "PsiCertificate",
]

PSI_RTOL = 1e-7
_NEAR_LOG_MIN = -80.0
_TAIL_LOG_SPAN = 80.0
_N_OSC_PANELS = 60


def spherical_mean(u, d):
    """Phi_d(u): average of cos(u theta_1) over the unit sphere of R^d."""
    u = np.asarray(u, dtype=float)
    if d == 1:
        return np.cos(u)
    nu = d / 2.0 - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.exp(gammaln(d / 2.0)) * (2.0 / u) ** nu * jv(nu, u)
    return np.where(u == 0, 1.0, val)


def one_minus_phi(u, d):
    """1 - Phi_d(u) without cancellation for small u."""
    u = np.asarray(u, dtype=float)
    if d == 1:
        return 2.0 * np.sin(0.5 * u) ** 2
    small = u < 1.0
    us = np.where(small, u, 0.0)
    x = 0.25 * us * us
    # sum_{k>=1} (-1)^(k+1) x^k Gamma(d/2) / (k! Gamma(k + d/2))
    series = np.zeros_like(us)
    term_coef = 1.0
    for k in range(1, 14):
        term_coef = term_coef / (k * (k - 1 + d / 2.0))
        series = series + (-1) ** (k + 1) * term_coef * x ** k
    big = 1.0 - spherical_mean(np.where(small, 1.0, u), d)
    return np.where(small, series, big)


def _osc_edges(d, n_panels, extra=()):
    # asymptotic zeros of Phi_d: (k + nu/2 - 1/4) pi with nu = d/2 - 1
    nu = d / 2.0 - 1.0
    shift = (nu / 2.0 - 0.25) * math.pi
    k0 = math.ceil((1.0 - shift) / math.pi)
    z = shift + math.pi * np.arange(k0, k0 + n_panels)
    z = z[z > 1.0 + 1e-9]
    edges = np.concatenate([[1.0], z])
    if extra:
        inside = [e for e in extra if edges[0] < e < edges[-1]]
        edges = np.unique(np.concatenate([edges, inside]))
    return edges


def _power_tail_estimate(f_end, f_next, step):
    """Tail of int f beyond a point where f decays geometrically per ``step``."""
    if f_end <= 0.0:
        return 0.0
    if f_next <= 0.0 or f_next >= f_end:
        raise QuadratureError("integrand does not decay; kernel not integrable at this end")
    rate = math.log(f_end / f_next) / step
    return f_end / rate


# --------------------------------------------------------------------------
# fixed-rule evaluation (used for the cache)


class _FixedRule:
    """psi(rho) by fixed composite Gauss--Legendre rules, vectorised over nodes."""

    def __init__(self, kernel: JumpKernel, n_gl=16, n_osc=_N_OSC_PANELS):
        self.kernel = kernel
        self.d = kernel.d
        self.sigma = sphere_area(kernel.d)
        self.x, self.w = gauss_legendre(n_gl)
        self.xo, self.wo = gauss_legendre(20)
        self.n_osc = n_osc

    def _panels(self, edges, x, w):
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * np.diff(edges)
        return mid[:, None] + half[:, None] * x, half[:, None] * w

    def __call__(self, rho):
        g = self.kernel.scaled
        d = self.d
        log_rho = math.log(rho)
        bps = [math.log(b) + log_rho for b in self.kernel.breakpoints]  # log u of kinks
        # near part in w = log u on [W, 0]
        edges = np.arange(_NEAR_LOG_MIN, 0.0 + 1e-12, 1.0)
        edges = np.unique(np.concatenate([edges, [b for b in bps if _NEAR_LOG_MIN < b < 0]]))
        nodes, wts = self._panels(edges, self.x, self.w)
        u = np.exp(nodes)
        near = np.sum(wts * one_minus_phi(u, d) * g(u / rho))
        f0 = float(one_minus_phi(np.exp(_NEAR_LOG_MIN), d) * g(np.exp(_NEAR_LOG_MIN) / rho))
        f1 = float(one_minus_phi(np.exp(_NEAR_LOG_MIN + 1), d)
                   * g(np.exp(_NEAR_LOG_MIN + 1) / rho))
        # integrand grows with w near the lower end: tail on (-inf, W]
        near += _power_tail_estimate(f0, f0 * f0 / f1, 1.0) if f1 > f0 else 0.0
        # tail mass: int_{1/rho}^inf g(s)/s ds in v = log s
        v0 = -log_rho
        edges = v0 + np.arange(0.0, _TAIL_LOG_SPAN + 1e-12, 1.0)
        kinks = [math.log(b) for b in self.kernel.breakpoints]
        edges = np.unique(np.concatenate([edges, [k for k in kinks if edges[0] < k < edges[-1]]]))
        nodes, wts = self._panels(edges, self.x, self.w)
        tail = np.sum(wts * g(np.exp(nodes)))
        e_end = edges[-1]
        tail += _power_tail_estimate(float(g(np.exp(e_end))), float(g(np.exp(e_end + 1.0))), 1.0)
        # oscillatory part: int_1^inf Phi(u) g(u/rho) / u du
        osc_edges = _osc_edges(d, self.n_osc, extra=[b * rho for b in self.kernel.breakpoints])
        nodes, wts = self._panels(osc_edges, self.xo, self.wo)
        vals = spherical_mean(nodes, d) * g(nodes / rho) / nodes
        partial = np.cumsum(np.sum(wts * vals, axis=1))
        osc = wynn_epsilon(partial[-40:])
        return self.sigma * (near + tail - osc)


# --------------------------------------------------------------------------
# adaptive evaluation (the public scalar operation)


def psi(kernel: JumpKernel, rho: float, rtol: float = PSI_RTOL) -> float:
    """psi(rho) by adaptive quadrature of the radial reduction."""
    rho = float(rho)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0.0:
        return 0.0
    d = kernel.d
    g = kernel.scaled
    qt = dict(rtol=rtol * 1e-2, atol=0.0)
    log_rho = math.log(rho)
    kinks_u = [math.log(b) + log_rho for b in kernel.breakpoints]
    # near part, decade blocks downwards until the block is negligible
    f_near = lambda w: one_minus_phi(np.exp(w), d) * g(np.exp(w) / rho)
    near, w_hi = 0.0, 0.0
    for _ in range(100):
        w_lo = w_hi - 5.0
        piece = adaptive_quad(f_near, w_lo, w_hi, breakpoints=kinks_u, min_panels=4,
                              rtol=qt["rtol"], atol=1e-4 * rtol * near)
        near += piece
        w_hi = w_lo
        if piece <= 1e-3 * rtol * near:
            f0 = float(f_near(np.array([w_hi]))[0])
            f1 = float(f_near(np.array([w_hi + 1.0]))[0])
            if f1 > f0 > 0:
                near += f0 / math.log(f1 / f0)
            break
    else:
        raise QuadratureError(f"psi near part does not converge on (0, {math.exp(w_hi):.3g}]",
                              (0.0, math.exp(w_hi)))
    # tail mass
    f_tail = lambda v: g(np.exp(v))
    kinks_s = [math.log(b) for b in kernel.breakpoints]
    tail, v_lo = 0.0, -log_rho
    for _ in range(100):
        v_hi = v_lo + 5.0
        piece = adaptive_quad(f_tail, v_lo, v_hi, breakpoints=kinks_s, min_panels=4,
                              rtol=qt["rtol"], atol=1e-4 * rtol * tail)
        tail += piece
        v_lo = v_hi
        if piece <= 1e-3 * rtol * tail:
            f0 = float(f_tail(np.array([v_lo]))[0])
            f1 = float(f_tail(np.array([v_lo + 1.0]))[0])
            if 0 < f1 < f0:
                tail += f0 / math.log(f0 / f1)
            break
    else:
        raise QuadratureError(f"psi tail does not converge on [{math.exp(v_lo):.3g}, inf)",
                              (math.exp(v_lo), math.inf))
    # oscillatory part, one adaptive integral per half period
    edges = _osc_edges(d, _N_OSC_PANELS, extra=[b * rho for b in kernel.breakpoints])
    f_osc = lambda u: spherical_mean(u, d) * g(u / rho) / u
    scale = 1e-4 * rtol * (near + tail)
    partial = np.cumsum([adaptive_quad(f_osc, a, b, rtol=qt["rtol"], atol=scale)
                         for a, b in zip(edges[:-1], edges[1:])])
    osc = wynn_epsilon(partial[-40:])
    return sphere_area(d) * (near + tail - osc)


def psi_monte_carlo(kernel: JumpKernel, rho: float, n: int = 400_000, seed: int = 0,
                    log_span=(-40.0, 60.0)):
    """Plain Monte-Carlo estimate of int (1 - cos(xi . y)) j(|y|) dy in R^d.

    Samples y = e^w theta with w uniform on ``log_span`` and theta uniform on
    the sphere.  Returns ``(estimate, standard_error)``.  Used only as an
    oracle that shares nothing with the Bessel reduction.
    """
    rng = np.random.default_rng(seed)
    d = kernel.d
    lo, hi = log_span
    w = rng.uniform(lo, hi, n)
    theta = rng.standard_normal((n, d))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    s = np.exp(w)
    # dy = s^(d-1) ds dS(theta) = s^d dw dS ; j s^d = g
    vals = (1.0 - np.cos(rho * s * theta[:, 0])) * kernel.scaled(s) * sphere_area(d) * (hi - lo)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


# --------------------------------------------------------------------------
# cached exponent


class CharExponent:
    """Evaluable psi with a log-grid cache (128 points per decade).

    Inside the cached range psi is interpolated by a monotone cubic (PCHIP) in
    log psi versus log rho, which is exact for power laws.  Below the range a
    power law with the end slope is used (psi(0) = 0 exactly); above it the
    cache is extended decade by decade on demand up to ``rho_hard_max``.
    """

    def __init__(self, kernel: JumpKernel, rho_range=(1e-6, 1e6), per_decade: int = 128,
                 rho_hard_max: float = 1e13):
        self.kernel = kernel
        self.d = kernel.d
        self.per_decade = per_decade
        self.rho_hard_max = rho_hard_max
        self._rule = _FixedRule(kernel)
        lo, hi = rho_range
        n = int(round(per_decade * math.log10(hi / lo))) + 1
        rho = np.geomspace(lo, hi, n)
        vals = np.array([self._rule(r) for r in rho])
        self._set_table(np.log(rho), np.log(vals))

    def _set_table(self, logr, logpsi):
        if np.any(~np.isfinite(logpsi)):
            raise QuadratureError("non-finite psi in cache")
        self._logr = logr
        self._logpsi = logpsi
        self._interp = PchipInterpolator(logr, logpsi, extrapolate=False)
        self._lo_slope = (logpsi[1] - logpsi[0]) / (logr[1] - logr[0])

    @property
    def rho_range(self):
        return float(np.exp(self._logr[0])), float(np.exp(self._logr[-1]))

    def extend_to(self, rho_max: float):
        """Grow the cache upwards so that it covers ``rho_max``."""
        cur = math.exp(self._logr[-1])
        if rho_max <= cur:
            return
        if rho_max > self.rho_hard_max:
            raise QuadratureError(f"psi requested at rho={rho_max:.3g} beyond the supported "
                                  f"maximum {self.rho_hard_max:.3g}")
        decades = math.ceil(math.log10(rho_max / cur))
        step = math.log(10.0) / self.per_decade
        new_logr = self._logr[-1] + step * np.arange(1, decades * self.per_decade + 1)
        new_vals = np.log([self._rule(math.exp(x)) for x in new_logr])
        self._set_table(np.concatenate([self._logr, new_logr]),
                        np.concatenate([self._logpsi, new_vals]))

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("rho must be nonnegative")
        rmax = float(rho.max()) if rho.size else 0.0
        if rmax > math.exp(self._logr[-1]):
            self.extend_to(rmax)
        out = np.zeros_like(rho)
        pos = rho > 0
        x = np.log(rho[pos])
        inside = x >= self._logr[0]
        vals = np.empty_like(x)
        vals[inside] = self._interp(np.minimum(x[inside], self._logr[-1]))
        vals[~inside] = self._logpsi[0] + self._lo_slope * (x[~inside] - self._logr[0])
        out[pos] = np.exp(vals)
        return out

    def direct(self, rho):
        return psi(self.kernel, rho)

    def log_slope(self, rho):
        """d log psi / d log rho from the cache."""
        x = np.log(np.asarray(rho, dtype=float))
        return self._interp.derivative()(np.clip(x, self._logr[0], self._logr[-1]))


# --------------------------------------------------------------------------
# comparability certificate


@dataclass
class PsiCertificate:
    kernel: str
    passed: bool
    ratio_min: float
    ratio_max: float
    upper_bound: float
    r: list = field(default_factory=list)
    ratio: list = field(default_factory=list)
    large_r: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kernel": self.kernel, "status": "PASS" if self.passed else "FAIL",
                "ratio_min": self.ratio_min, "ratio_max": self.ratio_max,
                "upper_bound": self.upper_bound, "large_r": self.large_r}


def certify_psi_h(kernel: JumpKernel, grid=None, exponent: Optional[CharExponent] = None,
                  triple: Optional[ScaleTriple] = None, tol: float = 1e-3) -> PsiCertificate:
    """Table of psi(1/r) / h(r); PASS when every value lies in (0, 2 + tol].

    For r >= 1 the ratios psi(1/r)/K(r) and psi(1/r)/ell(1/r) are recorded too.
    """
    if grid is None:
        grid = np.logspace(-3, 3, 6 * 16 + 1)
    r = np.asarray(grid, dtype=float)
    exponent = exponent or CharExponent(kernel)
    triple = triple or ScaleTriple(kernel.profile)
    p = exponent(1.0 / r)
    h = triple.h(r)
    ratio = p / h
    passed = bool(np.all(np.isfinite(ratio)) and np.all(ratio > 0) and np.all(ratio <= 2 + tol))
    big = r >= 1
    large = {}
    if np.any(big):
        rk = p[big] / triple.K(r[big])
        rl = p[big] / kernel.profile(1.0 / r[big])
        large = {"psi_over_K": [float(rk.min()), float(rk.max())],
                 "psi_over_ell": [float(rl.min()), float(rl.max())]}
    return PsiCertificate(kernel=kernel.name, passed=passed, ratio_min=float(ratio.min()),
                          ratio_max=float(ratio.max()), upper_bound=2 + tol,
                          r=r.tolist(), ratio=ratio.tolist(), large_r=large)
