"""Radial jump kernels, the operator T f = -f'/r, and sampled H(d, m) certificates.

Builtin kernels are written as j_d(r) = r^-d g(r) with a dimensionless profile
``g``; their derivatives are produced symbolically once (sympy) and then
evaluated through numpy.  Kernels obtained from other kernels (``T``-iterates,
subordinate Brownian motion) evaluate their derivatives numerically from
exact formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
import sympy as sp
from sympy.codegen.cfunctions import log1p
from scipy.special import gamma as gamma_fn

from .quadrature import adaptive_quad, gauss_legendre
from .scale_functions import ScalingProfile, make_profile

__all__ = [
    "JumpKernel",
    "AnalyticKernel",
    "BernsteinKernel",
    "InsufficientDifferentiability",
    "HCertificate",
    "builtin_kernel",
    "T_operator",
    "cm_coefficients",
    "T_power_via_coefficients",
    "subordinate_kernel",
    "verify_H",
    "sphere_area",
    "levy_integrability",
    "fd_derivative_jump",
    "FAMILIES",
]

FAMILIES = ("stable", "truncated", "log", "perturbed")
MAX_SYMBOLIC_ORDER = 8
_R = sp.Symbol("r", positive=True)


class InsufficientDifferentiability(ValueError):
    pass


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


class JumpKernel:
    """Radially symmetric jump density j_d(r) with derivatives up to ``m_max``.

    Subclasses implement ``_derivative(n, r, side)`` for every order they can
    produce; ``side`` chooses the one-sided limit at a breakpoint.
    """

    d: int
    m_max: int
    profile: Optional[ScalingProfile]
    breakpoints: tuple = ()
    name: str = "kernel"

    def __call__(self, r):
        return self.derivative(0, r)

    def derivative(self, n: int, r, side: int = +1):
        if n < 0:
            raise ValueError("derivative order must be nonnegative")
        if n > self.m_max:
            raise InsufficientDifferentiability(
                f"{self.name}: derivative of order {n} requested but m_max = {self.m_max}")
        return self._derivative(n, np.asarray(r, dtype=float), side)

    def scaled(self, r):
        """r^d j_d(r); finite at small r where j itself may overflow."""
        r = np.asarray(r, dtype=float)
        return r ** self.d * self(r)

    def ell_of_inverse(self, r):
        """ell(1/r) from the attached profile, or r^d j(r) when there is none."""
        r = np.asarray(r, dtype=float)
        if self.profile is None:
            return self.scaled(r)
        return self.profile(1.0 / r)

    @property
    def sigma(self):
        return sphere_area(self.d)

    def to_dict(self):
        return {"name": self.name, "d": self.d, "m_max": self.m_max,
                "profile": self.profile.to_dict() if self.profile else None,
                "breakpoints": list(self.breakpoints)}

    def _derivative(self, n, r, side):  # pragma: no cover - abstract
        raise NotImplementedError


# --------------------------------------------------------------------------
# builtin families


def _exact(alpha):
    return sp.nsimplify(alpha, rational=True) if float(alpha) == float(
        sp.nsimplify(alpha, rational=True)) else sp.Float(alpha, 30)


def _family_profile_expr(family, alpha):
    """Profile g with j_d(r) = r^-d g(r) for the three smooth families."""
    a = _exact(alpha)
    k = int(math.ceil(alpha))
    if family == "stable":
        return _R ** (-a)
    u = _R ** (-a / k)
    if family == "truncated":
        return (u / (1 + u)) ** k
    if family == "log":
        return log1p(u) * (u / (1 + u)) ** (k - 1)
    raise ValueError(f"unknown kernel family {family!r}")


def _lambdify_const_safe(expr, module="numpy"):
    fn = sp.lambdify(_R, expr, module)
    if module != "numpy":
        return fn
    return lambda r: np.asarray(fn(r), dtype=float) + np.zeros_like(r)


@lru_cache(maxsize=64)
def _symbolic_tables(family, alpha, d, base, n_pert):
    """Numpy callables for the j derivatives on each smooth piece."""
    if family == "perturbed":
        g = _family_profile_expr(base, alpha)
        j = _R ** (-d) * g
        f_n = (1 - _R) ** n_pert / sp.factorial(n_pert)
        pieces = {-1: j * (1 + f_n), +1: j}        # r < 1, r > 1
    else:
        g = _family_profile_expr(family, alpha)
        j = _R ** (-d) * g
        pieces = {+1: j}
    out = {}
    for side, expr in pieces.items():
        derivs, cur = [], expr
        for _ in range(MAX_SYMBOLIC_ORDER + 1):
            derivs.append(_lambdify_const_safe(cur))
            cur = sp.diff(cur, _R)
        out[side] = (tuple(derivs), expr)
    g_fn = _lambdify_const_safe(g)
    return out, g_fn


class AnalyticKernel(JumpKernel):
    """Builtin kernel family with symbolic derivatives."""

    def __init__(self, family, alpha, d=1, base="log", n_pert=5):
        if family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
        if not 0.0 < alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
        if int(d) != d or d < 1:
            raise ValueError("d must be a positive integer")
        self.family = family
        self.alpha = float(alpha)
        self.d = int(d)
        self.base = base if family == "perturbed" else None
        self.n_pert = int(n_pert) if family == "perturbed" else None
        prof_family = {"stable": "power", "truncated": "truncated", "log": "log"}[
            base if family == "perturbed" else family]
        self.profile = make_profile(prof_family, alpha)
        if family == "perturbed":
            if base not in ("stable", "truncated", "log"):
                raise ValueError("perturbed base must be stable, truncated or log")
            if self.n_pert < 1:
                raise ValueError("perturbation order must be >= 1")
            # (1-r)^n/n! joins 0 with n-1 continuous derivatives at r = 1
            self.m_max = self.n_pert - 1
            self.breakpoints = (1.0,)
            self.name = f"perturbed[{base}](alpha={alpha:g},n={self.n_pert},d={d})"
        else:
            self.m_max = MAX_SYMBOLIC_ORDER
            self.breakpoints = ()
            self.name = f"{family}(alpha={alpha:g},d={d})"
        self._tables, self._g = _symbolic_tables(family, self.alpha, self.d, base, self.n_pert)

    def piece_derivative(self, n, r, side=+1):
        """Derivative of the smooth piece selected by r (any order <= 8).

        At a breakpoint ``side`` picks the left (-1) or right (+1) piece; this
        is the one-sided derivative even when the two sides disagree.
        """
        if n > MAX_SYMBOLIC_ORDER:
            raise InsufficientDifferentiability(f"symbolic order capped at {MAX_SYMBOLIC_ORDER}")
        r = np.asarray(r, dtype=float)
        right = self._tables[+1][0][n](r)
        if -1 not in self._tables:
            return right
        left = self._tables[-1][0][n](r)
        at = r == 1.0
        return np.where(r < 1.0, left, np.where(at & (side < 0), left, right))

    def _derivative(self, n, r, side):
        return self.piece_derivative(n, r, side)

    def scaled(self, r):
        r = np.asarray(r, dtype=float)
        g = self._g(r)
        if self.family == "perturbed":
            fn = np.where(r < 1.0, (1.0 - np.minimum(r, 1.0)) ** self.n_pert
                          / math.factorial(self.n_pert), 0.0)
            g = g * (1.0 + fn)
        return g

    def mp_function(self, side=None):
        """mpmath-evaluable j_d for high-precision finite differences."""
        exprs = {s: e for s, (_, e) in self._tables.items()}
        fns = {s: sp.lambdify(_R, e, "mpmath") for s, e in exprs.items()}
        if len(fns) == 1:
            return fns[+1]
        return lambda x: fns[-1](x) if x < 1 else fns[+1](x)

    def sympy_expr(self, side=+1):
        return self._tables[side][1]

    def to_dict(self):
        out = super().to_dict()
        out.update(family=self.family, alpha=self.alpha, base=self.base, n=self.n_pert)
        return out


def builtin_kernel(family: str, alpha: float, d: int = 1, base: str = "log", n: int = 5):
    """Kernel families: ``stable``, ``truncated``, ``log`` and ``perturbed``.

    ``perturbed`` multiplies the ``base`` family by 1 + (1-r)_+^n / n!.
    """
    return AnalyticKernel(family, alpha, d, base=base, n_pert=n)


# --------------------------------------------------------------------------
# T operator


class TKernel(JumpKernel):
    """T f = -f'(r)/r applied once to ``inner``; lives in dimension d + 2."""

    def __init__(self, inner: JumpKernel):
        if inner.m_max < 1:
            raise InsufficientDifferentiability(
                f"{inner.name}: T needs one derivative, m_max = {inner.m_max}")
        self.inner = inner
        self.d = inner.d + 2
        self.m_max = inner.m_max - 1
        self.profile = inner.profile
        self.breakpoints = inner.breakpoints
        self.name = f"T[{inner.name}]"

    def _derivative(self, q, r, side):
        # (d/dr)^q (-f'/r) = -sum_k C(q,k) (-1)^k k! r^(-1-k) f^(q-k+1)
        total = np.zeros_like(r)
        for k in range(q + 1):
            coef = math.comb(q, k) * (-1) ** k * math.factorial(k)
            total = total + coef * r ** (-1.0 - k) * self.inner.derivative(q - k + 1, r, side)
        return -total


def T_operator(kernel: JumpKernel, n: int) -> JumpKernel:
    """n-fold application of T; the result lives in dimension d + 2n."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > kernel.m_max:
        raise InsufficientDifferentiability(
            f"{kernel.name}: T^{n} needs {n} derivatives, m_max = {kernel.m_max}")
    out = kernel
    for _ in range(n):
        out = TKernel(out)
    return out


def cm_coefficients(n: int):
    """Integer table C[m][k], 0 <= k <= m <= n, with

        T^m f = sum_k C[m][k] (-1/r)^(2m-k) f^(k).

    Filled by C[m][k] = (2(m-1) - k) C[m-1][k] + C[m-1][k-1] from C[1][1] = 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    C = [[0] * (n + 1) for _ in range(n + 1)]
    C[1][1] = 1
    for m in range(2, n + 1):
        for k in range(1, m + 1):
            C[m][k] = (2 * (m - 1) - k) * C[m - 1][k] + C[m - 1][k - 1]
    return C


def T_power_via_coefficients(derivs: Sequence[np.ndarray], r, n: int):
    """Evaluate T^n f from samples f^(k)(r), k = 0..n, using the coefficient table."""
    r = np.asarray(r, dtype=float)
    C = cm_coefficients(n)
    return sum(C[n][k] * (-1.0 / r) ** (2 * n - k) * derivs[k] for k in range(n + 1))


# --------------------------------------------------------------------------
# subordinate Brownian motion


@dataclass(frozen=True)
class BernsteinKernel:
    """Levy measure ``mu`` of a Bernstein function plus drift ``b``.

    ``atoms`` is a sequence of (mass, location); ``density`` is a callable on
    (0, inf) integrated over ``support``.
    """

    atoms: tuple = ()
    density: Optional[Callable] = None
    support: tuple = (1e-4, 1e4)
    b: float = 0.0
    panels_per_decade: int = 6

    def nodes(self):
        ts, ws = [], []
        for mass, loc in self.atoms:
            if mass < 0 or loc <= 0:
                raise ValueError("atoms need mass >= 0 and location > 0")
            ts.append(float(loc))
            ws.append(float(mass))
        if self.density is not None:
            lo, hi = self.support
            k = max(1, int(math.ceil(self.panels_per_decade * math.log10(hi / lo))))
            edges = np.linspace(math.log(lo), math.log(hi), k + 1)
            x, w = gauss_legendre(24)
            mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
            v = (mid[:, None] + half[:, None] * x).ravel()
            wv = (half[:, None] * w).ravel()
            t = np.exp(v)
            ts.extend(t)
            ws.extend(wv * t * np.asarray(self.density(t), dtype=float))
        return np.asarray(ts), np.asarray(ws)

    def integrability(self):
        """int (1 ^ t) mu(dt)."""
        t, w = self.nodes()
        return float(np.sum(np.minimum(1.0, t) * w))

    def phi(self, lam):
        t, w = self.nodes()
        lam = np.asarray(lam, dtype=float)
        return self.b * lam + (-np.expm1(-lam[..., None] * t) * w).sum(axis=-1)


def _hermite_phys(n, x):
    c = np.zeros(n + 1)
    c[n] = 1.0
    return np.polynomial.hermite.hermval(x, c)


class SubordinateKernel(JumpKernel):
    """J_d(r) = int (4 pi t)^(-d/2) exp(-r^2/(4t)) mu(dt)."""

    def __init__(self, bk: BernsteinKernel, d: int, profile: Optional[ScalingProfile] = None,
                 name="subordinate"):
        if bk.integrability() == 0.0:
            raise ValueError("empty Levy measure")
        if not np.isfinite(bk.integrability()):
            raise ValueError("Levy measure violates int (1 ^ t) mu(dt) < inf")
        self.bk = bk
        self.d = int(d)
        self.m_max = MAX_SYMBOLIC_ORDER
        self.profile = profile
        self.breakpoints = ()
        self.name = f"{name}(d={d})"
        self._t, self._w = bk.nodes()

    def _derivative(self, n, r, side):
        t, w = self._t, self._w
        shape = r.shape
        rr = r.reshape(-1, 1)
        s = 2.0 * np.sqrt(t)
        x = rr / s
        # d^n/dr^n exp(-x^2) = (-1/s)^n H_n(x) exp(-x^2)
        val = (4 * np.pi * t) ** (-self.d / 2.0) * (-1.0 / s) ** n * _hermite_phys(n, x) \
            * np.exp(-x * x)
        out = val @ w
        return out.reshape(shape)


def subordinate_kernel(bk: BernsteinKernel, d: int, profile=None, name="subordinate"):
    return SubordinateKernel(bk, d, profile=profile, name=name)


def stable_subordinator(alpha: float, support=(1e-4, 1e4)) -> BernsteinKernel:
    """Levy measure alpha/Gamma(1-alpha) t^(-1-alpha) dt of the alpha-stable subordinator."""
    c = alpha / gamma_fn(1.0 - alpha)
    return BernsteinKernel(density=lambda t: c * t ** (-1.0 - alpha), support=support)


# --------------------------------------------------------------------------
# certificates


@dataclass
class HCertificate:
    kernel: str
    d: int
    m: int
    passed: bool
    kappa: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kernel": self.kernel, "d": self.d, "m": self.m,
                "status": "PASS" if self.passed else "FAIL",
                "kappa": [list(k) for k in self.kappa], "failures": self.failures,
                "grid": self.grid}


def _certificate_grid(per_decade=64, lo=-4, hi=4):
    return np.logspace(lo, hi, (hi - lo) * per_decade + 1)


def verify_H(kernel: JumpKernel, m: int, per_decade: int = 64, decades=(-4, 4),
             rel_tol: float = 1e-9) -> HCertificate:
    """Sampled check of H(d, m) on a log grid.

    For n <= m reports min/max of (-1)^n j^(n)(r) r^(d+n) / ell(1/r) as the
    empirical kappa_{1,n}, kappa_{2,n}; checks that T^n j is positive and
    nonincreasing; and checks that derivatives up to order m are continuous
    across the kernel's breakpoints.  Never raises for m > m_max: the
    certificate records the failing order and location instead.
    """
    r = _certificate_grid(per_decade, *decades)
    cert = HCertificate(kernel=kernel.name, d=kernel.d, m=m, passed=True,
                        grid={"r_min": float(r[0]), "r_max": float(r[-1]),
                              "per_decade": per_decade})
    ell = kernel.ell_of_inverse(r)
    for bp in kernel.breakpoints:
        if not r[0] <= bp <= r[-1]:
            continue
        if m > kernel.m_max:
            cert.passed = False
            cert.failures.append({
                "n": kernel.m_max + 1, "r": float(bp),
                "reason": f"derivative of order {kernel.m_max + 1} does not exist at r={bp:g}"})
        if hasattr(kernel, "piece_derivative"):
            for n in range(min(m, kernel.m_max) + 1):
                lft = float(kernel.piece_derivative(n, np.array([bp]), side=-1)[0])
                rgt = float(kernel.piece_derivative(n, np.array([bp]), side=+1)[0])
                if abs(lft - rgt) > 1e-8 * max(abs(lft), abs(rgt), 1e-300):
                    cert.passed = False
                    cert.failures.append({"n": n, "r": float(bp),
                                          "reason": f"one-sided derivatives differ ({lft:.6g} vs {rgt:.6g})"})
    for n in range(min(m, kernel.m_max) + 1):
        dn = kernel.derivative(n, r)
        ratio = (-1) ** n * dn * r ** (kernel.d + n) / ell
        finite = np.isfinite(ratio)
        if not np.all(finite) or np.any(ratio <= 0):
            bad = int(np.argmax(~finite | (ratio <= 0)))
            cert.passed = False
            cert.failures.append({"n": n, "r": float(r[bad]),
                                  "reason": "sign condition (-1)^n j^(n) > 0 violated"})
            cert.kappa.append((float("nan"), float("nan")))
        else:
            cert.kappa.append((float(ratio.min()), float(ratio.max())))
        Tn = T_operator(kernel, n)(r)
        if np.any(Tn <= 0):
            cert.passed = False
            cert.failures.append({"n": n, "r": float(r[int(np.argmax(Tn <= 0))]),
                                  "reason": f"T^{n} j not positive"})
        inc = np.diff(Tn) > rel_tol * np.abs(Tn[:-1])
        if np.any(inc):
            cert.passed = False
            cert.failures.append({"n": n, "r": float(r[int(np.argmax(inc))]),
                                  "reason": f"T^{n} j not nonincreasing"})
    if m > kernel.m_max and not kernel.breakpoints:
        cert.passed = False
        cert.failures.append({"n": kernel.m_max + 1, "r": None,
                              "reason": f"kernel has only {kernel.m_max} derivatives"})
    return cert


def levy_integrability(kernel: JumpKernel) -> float:
    """sigma_{d-1} int_0^inf (1 ^ r^2) j(r) r^(d-1) dr by quadrature in log r."""
    sig = kernel.sigma

    def inner(v):
        r = np.exp(v)
        return np.minimum(1.0, r * r) * kernel.scaled(r)

    # (1 ^ r^2) j r^(d-1) dr = (1 ^ r^2) r^d j dr / r = (1 ^ r^2) g(r) dv
    total = 0.0
    for lo, hi in ((-60.0, -20.0), (-20.0, 0.0), (0.0, 20.0), (20.0, 60.0)):
        total += adaptive_quad(inner, lo, hi, rtol=1e-10, breakpoints=(0.0,), min_panels=8)
    return sig * total


def fd_derivative_jump(kernel: AnalyticKernel, order: int = 5, at: float = 1.0,
                       h: float = 1e-5, n_side: int = 8, dps: int = 40):
    """Finite-difference evidence for a jump of j^(order) at ``at``.

    Central differences of the given order are taken in mpmath at ``dps``
    digits on the points at + i h.  Returns the jump across ``at`` (difference
    of the stencils centred at +-(order//2 + 1) h, whose supports stay on one
    side) and the largest variation between neighbouring stencils that do not
    touch ``at``.
    """
    f = kernel.mp_function()
    with mpmath.workdps(dps):
        hh = mpmath.mpf(h)
        x0 = mpmath.mpf(at)
        half = (order + 1) // 2 + 1          # stencil half-width in steps
        span = n_side + half + 1
        vals = {i: f(x0 + i * hh) for i in range(-span - half, span + half + 1)}
        # central difference weights for the given order on 2*half+1 points
        offsets = list(range(-half, half + 1))
        weights = _fd_weights(order, offsets)

        def D(c):
            return sum(w * vals[c + o] for w, o in zip(weights, offsets)) / hh ** order

        centres_right = list(range(half + 1, half + 1 + n_side))
        centres_left = [-c for c in centres_right]
        dr = [D(c) for c in centres_right]
        dl = [D(c) for c in centres_left]
        jump = abs(dr[0] - dl[0])
        neigh = max(max(abs(a - b) for a, b in zip(dr[1:], dr[:-1])),
                    max(abs(a - b) for a, b in zip(dl[1:], dl[:-1])))
        return float(jump), float(neigh)


def _fd_weights(order, offsets):
    """Finite-difference weights for the ``order``-th derivative (exact rationals)."""
    n = len(offsets)
    A = sp.Matrix(n, n, lambda i, j: sp.Integer(offsets[j]) ** i)
    rhs = sp.Matrix(n, 1, lambda i, _: sp.factorial(order) if i == order else 0)
    sol = A.LUsolve(rhs)
    return [mpmath.mpf(sp.Rational(s).p) / mpmath.mpf(sp.Rational(s).q) for s in sol]
