"""The nonlocal operator L and its coefficient version L^a.

Two independent routes are provided:

* spectral, on the torus [-pi P, pi P)^d sampled on N^d points: the operator
  is the Fourier multiplier -psi(|xi|) (or -m(t, xi) psi(|xi|) for L^a);
* direct quadrature of the singular integral

      int (f(x+y) - f(x) - grad f(x) . y 1_{|y| <= r0}) a(t, y) j_d(|y|) dy

  with the inner ball regularised by subtracting the Hessian quadratic (added
  back analytically).  In d = 1 a periodic f is handled exactly by summing
  whole periods and a first-order tail correction, so it can serve as the
  oracle for the torus route.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .char_exponent import CharExponent, psi as psi_direct
from .jump_kernels import JumpKernel, sphere_area
from .quadrature import QuadratureError, adaptive_quad, gauss_legendre

__all__ = [
    "SpectralField",
    "Coefficient",
    "constant_coefficient",
    "time_coefficient",
    "annulus_coefficient",
    "product_coefficient",
    "general_coefficient",
    "apply_L_spectral",
    "apply_L_quadrature",
    "apply_La_spectral",
    "bessel_potential",
    "coefficient_multiplier",
    "multiplier_on_grid",
    "check_coefficient",
    "norm_equivalence",
    "lp_norm",
]

_MAGIC = b"SVF1"
_SMALL_Y = 1e-2
_ANGULAR_NODES = 32


# --------------------------------------------------------------------------
# torus fields


class SpectralField:
    """Real samples on the torus [-pi P, pi P)^d with lazily computed DFT coefficients.

    Parameters
    ----------
    values : ndarray
        Shape ``(N,) * d``.
    period : float
        The box half-width parameter P; mode k has frequency k / P.
    """

    def __init__(self, values, period: float = 1.0):
        values = np.asarray(values, dtype=float)
        N = values.shape[0]
        if any(n != N for n in values.shape):
            raise ValueError("values must have equal extent along every axis")
        if N < 2 or N & (N - 1):
            raise ValueError("N must be a power of two")
        self.d = values.ndim
        self.N = N
        self.period = float(period)
        self._values = values
        self._coeffs = None

    @classmethod
    def from_coeffs(cls, coeffs, period=1.0):
        vals = np.fft.ifftn(coeffs).real
        out = cls(vals, period)
        out._coeffs = np.asarray(coeffs, dtype=complex)
        return out

    @classmethod
    def from_function(cls, f, d: int, N: int, period: float = 1.0):
        """Sample ``f`` (called with d coordinate arrays) on the grid."""
        axes = np.meshgrid(*([cls.axis(N, period)] * d), indexing="ij")
        return cls(f(*axes), period)

    @staticmethod
    def axis(N, period=1.0):
        return -math.pi * period + 2 * math.pi * period * np.arange(N) / N

    @property
    def values(self):
        if self._values is None:
            self._values = np.fft.ifftn(self._coeffs).real
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = np.fft.fftn(self._values)
        return self._coeffs

    @property
    def cell_volume(self):
        return (2 * math.pi * self.period / self.N) ** self.d

    def frequencies(self):
        """Tuple of per-axis frequency arrays, k / P."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        return tuple(np.meshgrid(*([k / self.period] * self.d), indexing="ij"))

    def modulus(self):
        """|xi_k| on the coefficient grid."""
        return np.sqrt(sum(f * f for f in self.frequencies()))

    def with_multiplier(self, mult):
        return SpectralField.from_coeffs(self.coeffs * mult, self.period)

    def tail_mass(self):
        """Share of the coefficient energy in modes with max |k| >= N/4."""
        k = np.abs(np.fft.fftfreq(self.N, d=1.0 / self.N))
        grids = np.meshgrid(*([k] * self.d), indexing="ij")
        high = np.max(np.stack(grids), axis=0) >= self.N // 4
        e = np.abs(self.coeffs) ** 2
        tot = float(e.sum())
        return float(e[high].sum()) / tot if tot > 0 else 0.0

    def __add__(self, other):
        return SpectralField(self.values + other.values, self.period)

    def __sub__(self, other):
        return SpectralField(self.values - other.values, self.period)

    def __mul__(self, c):
        return SpectralField(self.values * float(c), self.period)

    __rmul__ = __mul__

    # flat binary layout: magic, then <d, N, P> little endian, then row-major float64 values
    def to_bytes(self) -> bytes:
        head = _MAGIC + struct.pack("<iid", self.d, self.N, self.period)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes):
        if blob[:4] != _MAGIC:
            raise ValueError("not a field dump")
        d, N, P = struct.unpack("<iid", blob[4:20])
        vals = np.frombuffer(blob[20:], dtype="<f8")
        if vals.size != N ** d:
            raise ValueError("truncated field dump")
        return cls(vals.reshape((N,) * d).copy(), P)


def lp_norm(field_: SpectralField, p: float) -> float:
    """Grid L_p norm over the box."""
    v = np.abs(field_.values)
    if math.isinf(p):
        return float(v.max())
    return float((np.sum(v ** p) * field_.cell_volume) ** (1.0 / p))


def _symbol_on_grid(field_: SpectralField, exponent: CharExponent):
    xi = field_.modulus()
    top = float(xi.max())
    if top > exponent.rho_hard_max:
        raise QuadratureError(f"grid frequency {top:.3g} beyond the exponent's range "
                              f"{exponent.rho_hard_max:.3g}")
    return exponent(xi.ravel()).reshape(xi.shape)


def apply_L_spectral(field_: SpectralField, exponent: CharExponent) -> SpectralField:
    """L f on the torus: coefficients times -psi(|xi|)."""
    return field_.with_multiplier(-_symbol_on_grid(field_, exponent))


def bessel_potential(field_: SpectralField, exponent: CharExponent, gamma: float) -> SpectralField:
    """(1 - L)^(gamma/2) f: coefficients times (1 + psi)^(gamma/2)."""
    if gamma == 0:
        return SpectralField(field_.values.copy(), field_.period)
    return field_.with_multiplier((1.0 + _symbol_on_grid(field_, exponent)) ** (0.5 * gamma))


# --------------------------------------------------------------------------
# coefficients a(t, y)


@dataclass
class Coefficient:
    """Bounded symmetric coefficient a(t, y) with a0 <= a <= a1.

    ``time_factor`` c(t) and ``radial_factor`` b(|y|) describe the separable
    case a = c(t) b(|y|); a non-separable (possibly anisotropic) coefficient
    is given by ``func(t, y)`` with y of shape (..., d).
    """

    a0: float
    a1: float
    name: str = "coefficient"
    time_factor: Optional[Callable] = None
    radial_factor: Optional[Callable] = None
    radial_breakpoints: tuple = ()
    func: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.a0 <= self.a1 < math.inf:
            raise ValueError("need 0 < a0 <= a1 < inf")

    @property
    def separable(self):
        return self.func is None

    @property
    def time_independent(self):
        return self.func is None and self.time_factor is None

    def c(self, t):
        return 1.0 if self.time_factor is None else float(self.time_factor(t))

    def b(self, r):
        r = np.asarray(r, dtype=float)
        return np.ones_like(r) if self.radial_factor is None else self.radial_factor(r)

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(t, y), dtype=float)
        r = np.sqrt(np.sum(y * y, axis=-1))
        return self.c(t) * self.b(r)

    def to_dict(self):
        return {"name": self.name, "a0": self.a0, "a1": self.a1, **self.params}


def constant_coefficient(c: float) -> Coefficient:
    return Coefficient(a0=c, a1=c, name=f"constant({c:g})",
                       radial_factor=(None if c == 1 else (lambda r, c=c: np.full_like(r, c))),
                       params={"kind": "constant", "value": c})


def time_coefficient(c, a0, a1, name="time") -> Coefficient:
    """a(t, y) = c(t)."""
    return Coefficient(a0=a0, a1=a1, name=name, time_factor=c, params={"kind": "time"})


def annulus_coefficient(a0, a1, radius=1.0) -> Coefficient:
    """a(t, y) = a0 + (a1 - a0) 1_{|y| > radius}."""
    b = lambda r: np.where(np.asarray(r) > radius, a1, a0).astype(float)
    return Coefficient(a0=min(a0, a1), a1=max(a0, a1), name=f"annulus({a0:g},{a1:g})",
                       radial_factor=b, radial_breakpoints=(radius,),
                       params={"kind": "annulus", "inner": a0, "outer": a1, "radius": radius})


def product_coefficient(c, b, a0, a1, breakpoints=(), name="product") -> Coefficient:
    """a(t, y) = c(t) b(|y|)."""
    return Coefficient(a0=a0, a1=a1, name=name, time_factor=c, radial_factor=b,
                       radial_breakpoints=tuple(breakpoints), params={"kind": "product"})


def general_coefficient(func, a0, a1, name="general") -> Coefficient:
    return Coefficient(a0=a0, a1=a1, name=name, func=func, params={"kind": "general"})


class _WeightedRadial:
    # the minimal surface psi() needs: d, scaled, breakpoints
    def __init__(self, d, scaled, breakpoints=(), name="weighted"):
        self.d = d
        self.scaled = scaled
        self.breakpoints = tuple(sorted(set(breakpoints)))
        self.name = name


def _angular_rule(d, n=_ANGULAR_NODES):
    """Directions and weights summing to the sphere area."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        th = 2 * math.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n, 2 * math.pi / n)
    raise NotImplementedError("anisotropic coefficients are supported for d <= 2")


def _numerator(coef: Coefficient, kernel: JumpKernel, t, xi, rtol=1e-9):
    """int (1 - cos(y . xi)) a(t, y) j(|y|) dy."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = kernel.d
    bps = tuple(kernel.breakpoints) + tuple(coef.radial_breakpoints)
    if coef.separable:
        if xi.size not in (1, d):
            raise ValueError("xi must be |xi| or a vector of length d")
        rho = float(np.linalg.norm(xi))
        if coef.radial_factor is None:
            base = psi_direct(kernel, rho, rtol=rtol)
        else:
            w = _WeightedRadial(d, lambda r: coef.b(r) * kernel.scaled(r), bps)
            base = psi_direct(w, rho, rtol=rtol)
        return coef.c(t) * base
    if xi.size != d:
        raise ValueError("an anisotropic coefficient needs the full vector xi")
    dirs, wts = _angular_rule(d)
    total = 0.0
    for e, wgt in zip(dirs, wts):
        s = float(abs(e @ xi))
        if s == 0.0:
            continue
        g = lambda r, e=e: coef(t, np.asarray(r)[..., None] * e) * kernel.scaled(r)
        # psi in d = 1 equals 2 int_0^inf (1 - cos(rho s)) g(rho) / rho d rho
        total += wgt * 0.5 * psi_direct(_WeightedRadial(1, g, bps), s, rtol=rtol)
    return total


def coefficient_multiplier(coef: Coefficient, kernel: JumpKernel, t, xi, rtol=1e-9):
    """m(t, xi) = int (1 - cos(y.xi)) a j dy / psi(|xi|).

    Returns ``(m, flag)``; at xi = 0 the quotient is 0/0 and ``(a0, True)``
    is returned.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    rho = float(np.linalg.norm(xi))
    if rho == 0.0:
        return coef.a0, True
    if coef.separable and coef.radial_factor is None:
        return coef.c(t), False
    den = psi_direct(kernel, rho, rtol=rtol)
    return _numerator(coef, kernel, t, xi, rtol) / den, False


def multiplier_on_grid(coef: Coefficient, kernel: JumpKernel, field_: SpectralField, t=0.0,
                       _cache=None):
    """m(t, xi_k) on the coefficient grid of ``field_``.

    For separable coefficients the spatial factor is computed once per
    distinct |xi_k| (and memoised in ``_cache`` if given).
    """
    if coef.separable:
        xi = field_.modulus()
        uniq, inv = np.unique(np.round(xi.ravel(), 12), return_inverse=True)
        key = (id(coef), id(kernel), field_.N, field_.period, field_.d)
        if _cache is not None and key in _cache:
            space = _cache[key]
        else:
            space = np.array([coefficient_multiplier(coef, kernel, 0.0, u)[0] / coef.c(0.0)
                              if u > 0 else coef.a0 / coef.c(0.0) for u in uniq])
            if _cache is not None:
                _cache[key] = space
        return coef.c(t) * space[inv].reshape(xi.shape)
    freqs = field_.frequencies()
    out = np.empty(freqs[0].shape)
    for idx in np.ndindex(out.shape):
        v = np.array([f[idx] for f in freqs])
        out[idx] = coefficient_multiplier(coef, kernel, t, v)[0]
    return out


def apply_La_spectral(field_: SpectralField, coef: Coefficient, kernel: JumpKernel,
                      exponent: CharExponent, t=0.0, _cache=None) -> SpectralField:
    """L^a f on the torus: coefficients times -m(t, xi) psi(|xi|)."""
    m = multiplier_on_grid(coef, kernel, field_, t, _cache)
    return field_.with_multiplier(-m * _symbol_on_grid(field_, exponent))


def check_coefficient(coef: Coefficient, kernel: JumpKernel, t_samples=(0.0, 0.5, 1.0),
                      annuli=((0.1, 0.5), (0.5, 2.0), (2.0, 10.0)), n_samples=2000, seed=0):
    """Sampled bounds a0 <= a <= a1 and vanishing first moments on three annuli.

    Returns a dict with ``bounds_ok``, ``symmetric`` and the largest relative
    first moment |int y a j| / int |y| a j.
    """
    d = kernel.d
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n_samples, d)) * np.exp(rng.uniform(-3, 3, (n_samples, 1)))
    vals = np.concatenate([coef(t, y) for t in t_samples])
    bounds_ok = bool(vals.min() >= coef.a0 * (1 - 1e-12) and vals.max() <= coef.a1 * (1 + 1e-12))
    dirs, wts = _angular_rule(d, 64 if d == 2 else _ANGULAR_NODES)
    worst = 0.0
    for t in t_samples:
        for r_in, r_out in annuli:
            def moment(rr, comp):
                rr = np.asarray(rr, dtype=float)
                acc = np.zeros_like(rr)
                for e, w in zip(dirs, wts):
                    acc += w * e[comp] * coef(t, rr[..., None] * e)
                return acc * rr ** d * kernel(rr)

            def absmom(rr):
                rr = np.asarray(rr, dtype=float)
                acc = np.zeros_like(rr)
                for e, w in zip(dirs, wts):
                    acc += w * coef(t, rr[..., None] * e)
                return acc * rr ** d * kernel(rr)

            bps = [b for b in tuple(coef.radial_breakpoints) + tuple(kernel.breakpoints)
                   if r_in < b < r_out]
            scale = adaptive_quad(absmom, r_in, r_out, breakpoints=bps)
            for comp in range(d):
                mom = adaptive_quad(lambda rr: moment(rr, comp), r_in, r_out, breakpoints=bps,
                                    atol=1e-14 * scale)
                worst = max(worst, abs(mom) / scale)
    return {"bounds_ok": bounds_ok, "symmetric": worst < 1e-8, "max_rel_moment": worst,
            "sampled_min": float(vals.min()), "sampled_max": float(vals.max())}


# --------------------------------------------------------------------------
# direct quadrature of the singular integral


def _radial_weight(kernel, coef, t):
    if coef is None:
        return lambda r: kernel(r)
    if not coef.separable:
        raise ValueError("non-separable coefficients are applied through the angular rule")
    return lambda r: coef.c(t) * coef.b(r) * kernel(r)


def _fd_second(f, x, h=1e-2):
    # 8th-order central second derivative
    c = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])
    pts = x + h * np.arange(-4, 5)
    return float(c @ np.asarray(f(pts), dtype=float)) / (h * h)


def _fd_hessian_2d(f, x, h=1e-2):
    def along(e):
        return _fd_second(lambda s: f(*(x[:, None] + np.outer(e, s))), 0.0, h)

    H = np.empty((2, 2))
    H[0, 0] = along(np.array([1.0, 0.0]))
    H[1, 1] = along(np.array([0.0, 1.0]))
    dvv = along(np.array([1.0, 1.0]) / math.sqrt(2))
    # d_uu = (H00 + 2 H01 + H11) / 2
    H[0, 1] = H[1, 0] = dvv - 0.5 * (H[0, 0] + H[1, 1])
    return H


def _log_block_integral(fun, lo, hi, rtol, breakpoints=(), atol=0.0):
    """int_lo^hi fun(r) dr in the variable log r."""
    if hi <= lo:
        return 0.0
    bps = [math.log(b) for b in breakpoints if lo < b < hi]
    g = lambda v: fun(np.exp(v)) * np.exp(v)
    return adaptive_quad(g, math.log(lo), math.log(hi), rtol=rtol, atol=atol, breakpoints=bps,
                         min_panels=4)


def _tail_mass(w, r0, rtol, breakpoints=(), d=1):
    """sigma-free int_r0^inf w(r) r^(d-1) dr by decade blocks with a power-law remainder."""
    fun = lambda r: w(r) * r ** (d - 1)
    total, lo = 0.0, r0
    for _ in range(60):
        hi = lo * 10.0
        piece = _log_block_integral(fun, lo, hi, rtol * 1e-2, breakpoints)
        total += piece
        lo = hi
        if abs(piece) <= 1e-3 * rtol * abs(total):
            f0 = float(fun(np.array([lo]))[0]) * lo
            f1 = float(fun(np.array([10 * lo]))[0]) * 10 * lo
            if 0 < f1 < f0:
                total += f0 / (math.log(f0 / f1) / math.log(10.0))
            return total
    raise QuadratureError("tail mass of the kernel does not converge", (r0, math.inf))


def _small_moment(w, r0, rtol, breakpoints=(), d=1):
    """int_0^r0 r^(d+1) w(r) dr by decade blocks downwards."""
    fun = lambda r: w(r) * r ** (d + 1)
    total, hi = 0.0, r0
    for _ in range(60):
        lo = hi / 10.0
        piece = _log_block_integral(fun, lo, hi, rtol * 1e-2, breakpoints)
        total += piece
        hi = lo
        if abs(piece) <= 1e-3 * rtol * abs(total):
            f0 = float(fun(np.array([hi]))[0]) * hi
            f1 = float(fun(np.array([hi / 10]))[0]) * hi / 10
            if 0 < f1 < f0:
                total += f0 / (math.log(f0 / f1) / math.log(10.0))
            return total
    raise QuadratureError("second moment of the kernel does not converge", (0.0, r0))


def _quartic_piece(rem, w, ys, rtol):
    """int_0^ys rem(y) w(y) dy for a remainder rem = c4 y^4 + c6 y^6 + ...

    The quartic coefficient is extrapolated from rem(ys) and rem(ys/2); the
    integrand is too cancellation-prone to be sampled closer to 0.
    """
    r1 = float(np.asarray(rem(np.array([ys])))[0]) / ys ** 4
    r2 = float(np.asarray(rem(np.array([ys / 2])))[0]) / (ys / 2) ** 4
    c4 = (4.0 * r2 - r1) / 3.0
    return c4 * _small_moment(lambda y: w(y) * y * y, ys, rtol, d=1)


def apply_L_quadrature(f, x, kernel: JumpKernel, r0: float = 1.0, coef: Optional[Coefficient] = None,
                       t: float = 0.0, period: Optional[float] = None, reach: Optional[float] = None,
                       hess=None, rtol: float = 1e-10, periods: int = 2000,
                       n_angles: int = 64) -> float:
    """L f(x) (or L^a f(x)) by direct quadrature of the singular integral.

    Parameters
    ----------
    f : callable
        Vectorised; takes one coordinate array per dimension.
    x : float or array of length d
    r0 : float
        Compensator cutoff; the result does not depend on it.
    period : float, optional
        d = 1 only: f is 2 pi P periodic with P = ``period``.  Whole periods are
        summed up to ``periods`` of them and the remainder is estimated from
        the first-order expansion of the weight.
    reach : float, optional
        For non-periodic f: f(z) is negligible for |z| > reach.
    hess : float or (d, d) array, optional
        Hessian of f at x; finite differences otherwise.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    d = kernel.d
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != d:
        raise ValueError("x must have d components")
    if period is None and reach is None:
        raise ValueError("give either a period (d = 1) or the reach of f")
    if d == 1:
        return _quad_1d(f, float(x[0]), kernel, r0, coef, t, period, reach, hess, rtol, periods)
    if d == 2:
        if period is not None:
            raise NotImplementedError("periodic data are supported by the quadrature route in d = 1")
        return _quad_2d(f, x, kernel, r0, coef, t, reach, hess, rtol, n_angles)
    raise NotImplementedError("direct quadrature is implemented for d = 1 and d = 2")


def _quad_1d(f, x, kernel, r0, coef, t, period, reach, hess, rtol, periods):
    w = _radial_weight(kernel, coef, t)
    bps = tuple(kernel.breakpoints) + (tuple(coef.radial_breakpoints) if coef else ())
    fx = float(np.asarray(f(np.array([x])))[0])
    H = float(hess) if hess is not None else _fd_second(f, x)
    sym = lambda y: f(x + y) + f(x - y) - 2.0 * fx
    # inner ball: remainder after the quadratic, plus the quadratic analytically
    inner_fun = lambda y: (sym(y) - H * y * y) * w(y)
    moment = _small_moment(w, r0, rtol, bps, d=1)
    mass = _tail_mass(w, r0, rtol, bps, d=1)
    atol = rtol * (abs(H) * moment + abs(fx) * mass * r0 + 1e-300)
    ys = _SMALL_Y * min(r0, 1.0)
    inner = _log_block_integral(inner_fun, ys, r0, rtol, bps, atol)
    inner += H * moment + _quartic_piece(lambda y: sym(y) - H * y * y, w, ys, rtol)
    if period is None:
        Y = abs(x) + reach
        outer = 0.0
        if Y > r0:
            far = lambda y: (f(x + y) + f(x - y)) * w(y)
            outer = adaptive_quad(far, r0, Y, rtol=rtol, atol=1e-15,
                                  breakpoints=[b for b in bps if r0 < b < Y],
                                  min_panels=max(4, int(Y - r0)))
        return inner + outer - 2.0 * fx * mass
    T = 2 * math.pi * period
    xs, ws = gauss_legendre(24)
    # mean over one period (trapezoid is spectrally accurate for periodic f)
    grid = np.arange(4096) * T / 4096
    fbar = float(np.mean(f(grid)))
    G = lambda y: f(x + y) + f(x - y) - 2.0 * fbar
    per_panels = 32
    edges = r0 + T * np.arange(periods * per_panels + 1) / per_panels
    edges = np.unique(np.concatenate([edges, [b for b in bps if r0 < b < edges[-1]]]))
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    outer = 0.0
    chunk = 1 << 14
    for s in range(0, mid.size, chunk):
        yy = mid[s:s + chunk, None] + half[s:s + chunk, None] * xs
        outer += float(np.sum(half[s:s + chunk, None] * ws * G(yy) * w(yy)))
    # remainder: sum over later periods of int_0^T G(Y+s) w(Y+s) ds ~ c1 sum w'(Y_n)
    Y = edges[-1]
    ss = (np.arange(per_panels * 16) + 0.5) * T / (per_panels * 16)
    c1 = float(np.sum(ss * G(Y + ss))) * T / ss.size
    eps = 1e-3 * Y
    wY = float(w(np.array([Y]))[0])
    dw = float((w(np.array([Y + eps])) - w(np.array([Y - eps])))[0]) / (2 * eps)
    outer += c1 * (-wY / T - 0.5 * dw)
    return inner + outer + 2.0 * (fbar - fx) * mass


def _quad_2d(f, x, kernel, r0, coef, t, reach, hess, rtol, n_angles):
    th = math.pi * np.arange(n_angles) / n_angles
    dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    wth = math.pi / n_angles  # the symmetrised integrand is pi-periodic in theta
    fx = float(np.asarray(f(np.array([x[0]]), np.array([x[1]])))[0])
    H = np.asarray(hess, dtype=float) if hess is not None else _fd_hessian_2d(f, x)
    quad_form = np.einsum("ij,jk,ik->i", dirs, H, dirs)
    bps = tuple(kernel.breakpoints) + (tuple(coef.radial_breakpoints) if coef else ())

    def angular_weight(r):
        # a(t, r e_i) for every direction; both y and -y carry the same weight
        r = np.asarray(r, dtype=float)
        if coef is None:
            return np.ones(r.shape + (n_angles,))
        pts = r[..., None, None] * dirs
        return coef(t, pts)

    def ring(r, subtract):
        r = np.asarray(r, dtype=float)
        px = x[0] + r[..., None] * dirs[:, 0]
        py = x[1] + r[..., None] * dirs[:, 1]
        s = f(px, py) + f(2 * x[0] - px, 2 * x[1] - py) - 2.0 * fx
        if subtract:
            s = s - (r ** 2)[..., None] * quad_form
        return wth * np.sum(angular_weight(r) * s, axis=-1)

    j = lambda r: kernel(r)
    comp = lambda r: wth * np.sum(angular_weight(r) * quad_form, axis=-1) * j(r)
    moment = _small_moment(comp, r0, rtol, bps, d=2)
    amass = lambda r: wth * 2.0 * np.sum(angular_weight(r), axis=-1) * j(r)
    mass = _tail_mass(amass, r0, rtol, bps, d=2)
    atol = rtol * (abs(moment) + abs(fx) * mass * r0 * r0 + 1e-300)
    ys = _SMALL_Y * min(r0, 1.0)
    inner = _log_block_integral(lambda r: ring(r, True) * r * j(r), ys, r0, rtol, bps, atol)
    inner += moment + _quartic_piece(lambda r: ring(r, True), lambda r: r * j(r), ys, rtol)
    Y = float(np.linalg.norm(x)) + reach
    outer = 0.0
    if Y > r0:
        outer = adaptive_quad(lambda r: ring(r, False) * r * j(r) + 2.0 * fx * wth
                              * np.sum(angular_weight(r), axis=-1) * r * j(r), r0, Y,
                              rtol=rtol, atol=1e-15, breakpoints=[b for b in bps if r0 < b < Y],
                              min_panels=max(4, int(Y - r0)))
    return inner + outer - fx * mass


# --------------------------------------------------------------------------
# norm equivalence on band-limited data


def norm_equivalence(exponent: CharExponent, N=128, period=1.0, p=2.0, trials=20, seed=0,
                     band=None):
    """Ratios (||u||_p + ||L u||_p) / ||(1 - L) u||_p over random band-limited u (d = 1).

    Returns ``(min, max)`` of the ratios.
    """
    rng = np.random.default_rng(seed)
    band = band or N // 8
    ratios = []
    for _ in range(trials):
        c = np.zeros(N, dtype=complex)
        k = np.arange(1, band + 1)
        amp = rng.standard_normal(band) + 1j * rng.standard_normal(band)
        c[k] = amp / k
        c[-k] = np.conj(c[k])
        c[0] = rng.standard_normal()
        u = SpectralField.from_coeffs(c * N, period)
        Lu = apply_L_spectral(u, exponent)
        lhs = lp_norm(u, p) + lp_norm(Lu, p)
        rhs = lp_norm(u - Lu, p)
        ratios.append(lhs / rhs)
    return float(min(ratios)), float(max(ratios))
