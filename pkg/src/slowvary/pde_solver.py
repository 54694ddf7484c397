"""Forced nonlocal heat equation on the torus, u(0) = 0.

Each Fourier mode obeys u' = -lambda u + f with lambda = psi(|xi|) (or
m(t, xi) psi(|xi|)).  With f linear in s on every step the Duhamel integral
over a step of length dt is exact:

    u_{n+1} = e^{-z} u_n + dt (B(z) f_n + A(z) f_{n+1}),   z = lambda dt,
    A(z) = (z - 1 + e^{-z}) / z^2,   B(z) = (1 - (1 + z) e^{-z}) / z^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as _hot
from .char_exponent import CharExponent
from .heat_kernel import HeatKernelField, TimeTooSmallError
from .jump_kernels import JumpKernel
from .nonlocal_operator import (Coefficient, SpectralField, _symbol_on_grid, apply_L_spectral,
                                bessel_potential, lp_norm, multiplier_on_grid)
from .quadrature import gauss_legendre

__all__ = [
    "SpaceTimeField",
    "NormReport",
    "solve_constant",
    "solve_time_coeff",
    "residual",
    "duhamel_direct",
    "mixed_norm",
    "regularity_constant",
    "random_forcing",
    "step_weights",
]

_Z_SERIES = 0.1
_Z_ASYMPTOTIC = 700.0


@dataclass
class SpaceTimeField:
    """Samples ``values[n]`` of a periodic field at ``times[n]``."""

    times: np.ndarray
    values: np.ndarray
    period: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.times.size:
            raise ValueError("one slice per time required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")

    @property
    def d(self):
        return self.values.ndim - 1

    @property
    def N(self):
        return self.values.shape[1]

    @property
    def M(self):
        return self.times.size - 1

    def slice(self, n) -> SpectralField:
        return SpectralField(self.values[n], self.period)

    def coeffs(self):
        return np.fft.fftn(self.values, axes=tuple(range(1, self.d + 1)))

    @classmethod
    def from_coeffs(cls, times, coeffs, period=1.0, meta=None):
        d = coeffs.ndim - 1
        vals = np.fft.ifftn(coeffs, axes=tuple(range(1, d + 1))).real
        return cls(times, vals, period, dict(meta or {}))

    @classmethod
    def from_function(cls, f, times, d, N, period=1.0, meta=None):
        """Sample f(t, *x) on the grid."""
        axes = np.meshgrid(*([SpectralField.axis(N, period)] * d), indexing="ij")
        vals = np.stack([np.broadcast_to(f(float(t), *axes), axes[0].shape) for t in times])
        return cls(times, vals, period, dict(meta or {}))

    @property
    def zero_initial(self):
        return bool(np.all(self.values[0] == 0.0))

    def __add__(self, other):
        return SpaceTimeField(self.times, self.values + other.values, self.period, dict(self.meta))

    def __mul__(self, c):
        return SpaceTimeField(self.times, self.values * float(c), self.period, dict(self.meta))

    __rmul__ = __mul__


@dataclass
class NormReport:
    p: float
    q: float
    gamma: float
    T: float
    value: float
    sup: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"p": self.p, "q": self.q, "gamma": self.gamma, "T": self.T, "value": self.value,
                "sup": self.sup, **self.extra}


# --------------------------------------------------------------------------
# exponential integrator


def step_weights(z):
    """(e^{-z}, B(z), A(z)) elementwise; series near 0, asymptotic forms beyond 700."""
    z = np.asarray(z, dtype=float)
    decay = np.empty_like(z)
    A = np.empty_like(z)
    B = np.empty_like(z)
    small = z < _Z_SERIES
    big = z > _Z_ASYMPTOTIC
    mid = ~(small | big)
    zs = z[small]
    a = np.zeros_like(zs)
    b = np.zeros_like(zs)
    term = np.full_like(zs, 0.5)  # (-z)^k / (k+2)!
    for k in range(12):
        a += term
        b += (k + 1) * term
        term = term * (-zs) / (k + 3)
    A[small], B[small] = a, b
    decay[small] = np.exp(-zs)
    zm = z[mid]
    em = np.expm1(-zm)
    A[mid] = (zm + em) / zm ** 2
    B[mid] = (-em - zm * np.exp(-zm)) / zm ** 2
    decay[mid] = np.exp(-zm)
    zb = z[big]
    A[big] = (zb - 1.0) / zb ** 2
    B[big] = 1.0 / zb ** 2
    decay[big] = 0.0
    return decay, B, A


def _integrate(times, fhat, lam):
    """Per-mode sweep; ``lam`` has shape (M, K) (rates on each step)."""
    dt = np.diff(times)[:, None]
    decay, B, A = step_weights(lam * dt)
    return _hot.duhamel_sweep(decay, dt * B, dt * A, fhat)


def solve_constant(f: SpaceTimeField, exponent: CharExponent) -> SpaceTimeField:
    """u with du/dt = L u + f, u(0) = 0, mode by mode."""
    grid = f.slice(0)
    lam = _symbol_on_grid(grid, exponent).ravel()
    fhat = f.coeffs().reshape(f.times.size, -1)
    uhat = _integrate(f.times, fhat, np.broadcast_to(lam, (f.M, lam.size)))
    uhat = uhat.reshape(f.coeffs().shape)
    return SpaceTimeField.from_coeffs(f.times, uhat, f.period,
                                      {**f.meta, "solver": "constant", "kernel":
                                       exponent.kernel.name})


def _rates(f: SpaceTimeField, coef: Coefficient, kernel: JumpKernel, exponent: CharExponent,
           cache=None):
    grid = f.slice(0)
    psi_k = _symbol_on_grid(grid, exponent).ravel()
    mids = 0.5 * (f.times[1:] + f.times[:-1])
    if coef.separable:
        space = multiplier_on_grid(coef, kernel, grid, 0.0, cache).ravel() / coef.c(0.0)
        c = np.array([coef.c(t) for t in mids])
        return c[:, None] * space[None, :] * psi_k[None, :]
    return np.stack([multiplier_on_grid(coef, kernel, grid, t).ravel() * psi_k for t in mids])


def solve_time_coeff(f: SpaceTimeField, coef: Coefficient, kernel: JumpKernel,
                     exponent: CharExponent, _cache=None) -> SpaceTimeField:
    """u with du/dt = L^a u + f, u(0) = 0; m(t, xi) frozen at step midpoints."""
    lam = _rates(f, coef, kernel, exponent, _cache)
    fhat = f.coeffs().reshape(f.times.size, -1)
    uhat = _integrate(f.times, fhat, lam).reshape(f.coeffs().shape)
    return SpaceTimeField.from_coeffs(f.times, uhat, f.period,
                                      {**f.meta, "solver": "time_coeff", "coefficient": coef.name,
                                       "kernel": kernel.name})


# --------------------------------------------------------------------------
# residual


_D4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def residual(u: SpaceTimeField, f: SpaceTimeField, exponent: CharExponent,
             coef: Optional[Coefficient] = None, kernel: Optional[JumpKernel] = None,
             _cache=None) -> NormReport:
    """D_t u - L^a u - f at interior times (fourth-order central D_t).

    Returns the space-time L_2 norm in ``value`` and the max in ``sup``.
    """
    if u.times.size < 5:
        raise ValueError("need at least 5 time slices")
    dt = np.diff(u.times)
    if not np.allclose(dt, dt[0], rtol=1e-10, atol=0):
        raise ValueError("residual needs a uniform time grid")
    h = dt[0]
    grid = u.slice(0)
    psi_k = _symbol_on_grid(grid, exponent)
    uhat = u.coeffs()
    if coef is None:
        Lu_hat = -psi_k[None] * uhat
    else:
        kernel = kernel or exponent.kernel
        Lu_hat = np.stack([-multiplier_on_grid(coef, kernel, grid, t, _cache) * psi_k * uh
                           for t, uh in zip(u.times, uhat)])
    axes = tuple(range(1, u.d + 1))
    Lu = np.fft.ifftn(Lu_hat, axes=axes).real
    Dt = sum(c * u.values[2 + s:u.times.size - 2 + s] for s, c in zip(range(-2, 3), _D4)) / h
    r = Dt - Lu[2:-2] - f.values[2:-2]
    cell = grid.cell_volume
    l2 = math.sqrt(float(np.sum(r * r)) * cell * h)
    return NormReport(p=2, q=2, gamma=0, T=float(u.times[-1]), value=l2,
                      sup=float(np.max(np.abs(r))), extra={"dt": h})


# --------------------------------------------------------------------------
# direct space-time quadrature


class _PeriodicDensityTable:
    """p(tau, .) summed over the images z + n 2 pi P, tabulated for one tau."""

    def __init__(self, hk: HeatKernelField, tau, period, images=40, n_near=384):
        from scipy.interpolate import CubicSpline

        T = 2 * math.pi * period
        self.T = T
        # |z| <= T/2 after reduction; the near table covers |z + n T| <= 1.5 T
        rn = (1.5 * T) * (1 - np.cos(np.linspace(0, math.pi / 2, n_near)))
        self.near = CubicSpline(rn, hk.density(tau, rn))
        rf = np.geomspace(T, (images + 2) * T, 200)
        self.far = CubicSpline(np.log(rf), np.log(hk.density(tau, rf)))
        self.images = images
        # beyond the explicit images: t j(r) summed as an integral from (images + 1/2) T
        edge = (images + 0.5) * T
        v = np.log(np.geomspace(edge, edge * 1e8, 400))
        g = hk.kernel(np.exp(v)) * np.exp(v)
        self.rest = 2.0 * tau * float(np.trapezoid(g, v)) / T

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        z = (z + 0.5 * self.T) % self.T - 0.5 * self.T
        out = self.near(np.abs(z))
        for n in (1, -1):
            out = out + self.near(np.abs(z + n * self.T))
        for n in range(2, self.images + 1):
            out = out + np.exp(self.far(np.log(np.abs(z + n * self.T))))
            out = out + np.exp(self.far(np.log(np.abs(z - n * self.T))))
        return out + self.rest


def duhamel_direct(f: Callable, hk: HeatKernelField, t: float, x, s_range=(0.0, 1.0),
                   period=1.0, n_time=24, n_space=512):
    """u(t, x) = int_0^t int p(t-s, x-y) f(s, y) dy ds on the torus (d = 1).

    ``f(s, y)`` must vanish for s outside ``s_range``.  The density is
    periodised by explicit images plus a jump-tail remainder; the y-integral
    uses the periodic trapezoid rule and the s-integral Gauss-Legendre.
    """
    if hk.d != 1:
        raise NotImplementedError("direct Duhamel quadrature is implemented in d = 1")
    s0, s1 = s_range
    s1 = min(s1, t)
    if s1 <= s0:
        return np.zeros_like(np.atleast_1d(np.asarray(x, dtype=float)))
    if t - s1 < hk.t_min:
        raise TimeTooSmallError(f"t - s = {t - s1:g} below t_min = {hk.t_min:.4g}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    sg, wg = gauss_legendre(n_time)
    s_nodes = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * sg
    s_wts = 0.5 * (s1 - s0) * wg
    y = SpectralField.axis(n_space, period)
    dy = 2 * math.pi * period / n_space
    out = np.zeros_like(xs)
    for s, ws in zip(s_nodes, s_wts):
        table = _PeriodicDensityTable(hk, t - s, period)
        fy = f(s, y)
        for i, x0 in enumerate(xs):
            out[i] += ws * dy * float(np.sum(table(x0 - y) * fy))
    return out


# --------------------------------------------------------------------------
# norms


def _trapezoid_weights(times):
    dt = np.diff(times)
    w = np.zeros(times.size)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def mixed_norm(u: SpaceTimeField, p: float, q: float, gamma: float,
               exponent: Optional[CharExponent] = None) -> NormReport:
    """|| ||(1 - L)^(gamma/2) u(t)||_{L_p} ||_{L_q(0, T)} with the trapezoid rule in t."""
    if not (1 < p < math.inf and 1 < q < math.inf):
        raise ValueError("p and q must lie in (1, inf)")
    if gamma != 0 and exponent is None:
        raise ValueError("gamma != 0 needs the exponent")
    per_slice = np.empty(u.times.size)
    for n in range(u.times.size):
        s = u.slice(n)
        if gamma != 0:
            s = bessel_potential(s, exponent, gamma)
        per_slice[n] = lp_norm(s, p)
    w = _trapezoid_weights(u.times)
    val = float(np.sum(w * per_slice ** q)) ** (1.0 / q)
    return NormReport(p=p, q=q, gamma=gamma, T=float(u.times[-1]), value=val,
                      sup=float(per_slice.max()))


# --------------------------------------------------------------------------
# regularity constant


def random_forcing(rng, d, period, band, n_time_modes, T):
    """Smooth random f(t, x): a few Fourier modes in x with cosine-series amplitudes in t."""
    ks = rng.integers(-band, band + 1, size=(2 * band, d))
    amp = rng.standard_normal((2 * band, n_time_modes))
    phase = rng.uniform(0, 2 * math.pi, 2 * band)

    def f(t, *x):
        out = 0.0
        tt = np.cos(math.pi * np.arange(n_time_modes) * t / T)
        for k, a, ph in zip(ks, amp, phase):
            arg = sum(kk * xx for kk, xx in zip(k, x)) / period
            out = out + float(a @ tt) * np.cos(arg + ph)
        return out

    return f


def _mode_operator_norms(times, lam_modes, weights):
    """Largest singular value, per mode, of f_n -> lam u_n in the weighted l2 metric."""
    M = times.size - 1
    dt = np.diff(times)
    sq = np.sqrt(weights)
    norms = []
    for lam in lam_modes:
        decay, B, A = step_weights(lam * dt)
        G = np.zeros((M + 1, M + 1))
        for n in range(M):
            G[n + 1] = decay[n] * G[n]
            G[n + 1, n] += dt[n] * B[n]
            G[n + 1, n + 1] += dt[n] * A[n]
        op = (sq[:, None] * lam * G) / sq[None, :]
        norms.append(float(np.linalg.norm(op, 2)))
    return np.array(norms)


def regularity_constant(kernel: JumpKernel, exponent: CharExponent,
                        coef: Optional[Coefficient] = None, p=2.0, q=2.0, trials=20, N=64, M=128,
                        T=1.0, period=1.0, seed=0, refine=True, band=None, _cache=None):
    """Empirical ||L u|| / ||f|| in L_q(0, T; L_p) over random smooth forcings (d = 1).

    With ``refine`` the same forcings are re-solved on a grid with 2N points
    and 2M steps and the relative drift of the maximum is reported.  For
    p = q = 2 and constant coefficients the mode-wise operator norms of the
    discrete scheme give a rigorous upper bound, reported as ``oracle``.
    """
    if trials < 10:
        raise ValueError("at least 10 trials")
    rng = np.random.default_rng(seed)
    band = band or N // 8
    forcings = [random_forcing(rng, 1, period, band, 4, T) for _ in range(trials)]
    _cache = {} if _cache is None else _cache

    def ratios(N_, M_):
        times = np.linspace(0.0, T, M_ + 1)
        out = []
        for fn in forcings:
            f = SpaceTimeField.from_function(fn, times, 1, N_, period)
            if coef is None:
                u = solve_constant(f, exponent)
            else:
                u = solve_time_coeff(f, coef, kernel, exponent, _cache)
            Lu = np.stack([apply_L_spectral(u.slice(n), exponent).values
                           for n in range(times.size)])
            num = mixed_norm(SpaceTimeField(times, Lu, period), p, q, 0).value
            den = mixed_norm(f, p, q, 0).value
            out.append(num / den)
        return np.array(out), times

    r0, times = ratios(N, M)
    res = {"p": p, "q": q, "trials": trials, "seed": seed, "N": N, "M": M, "T": T,
           "max": float(r0.max()), "median": float(np.median(r0)),
           "coefficient": coef.name if coef else None}
    if refine:
        r1, _ = ratios(2 * N, 2 * M)
        res["max_refined"] = float(r1.max())
        res["drift"] = abs(float(r1.max()) / float(r0.max()) - 1.0)
    if p == 2 and q == 2 and coef is None:
        lam = np.unique(_symbol_on_grid(SpectralField(np.zeros(N), period), exponent))
        res["oracle"] = float(_mode_operator_norms(times, lam, _trapezoid_weights(times)).max())
    return res
