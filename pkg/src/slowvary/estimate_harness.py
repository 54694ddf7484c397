"""Desk-scale diagnostics for the Calderon-Zygmund part of the theory.

Parabolic cubes Q_b(t, x) = (t - 1/h(b), t + 1/h(b)) x B_b(x), mean
oscillations, a finite-family BMO seminorm and sharp function, the singular
operator

    L f(t, x) = lim_{eps -> 0} int_{-inf}^{t - eps} int q(t - s, x - y) f(s, y) dy ds,

q = L p, and the two tail integrals of |D_x q| and |q| whose b-independence
drives the BMO estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .heat_kernel import HeatKernelField
from .nonlocal_operator import SpectralField, _symbol_on_grid
from .pde_solver import step_weights
from .quadrature import gauss_legendre
from .scale_functions import ScaleTriple

__all__ = [
    "GridFunction2D",
    "ParabolicCube",
    "cube_family",
    "cube_mean_oscillation",
    "bmo_seminorm",
    "sharp_function",
    "operator_L",
    "tail_integral_q1",
    "tail_integral_q0",
    "tail_sweep",
    "bmo_estimate_check",
    "fefferman_stein_constant",
    "bump_ensemble",
    "EpsilonLimitError",
    "RemainderTooLargeError",
]


class EpsilonLimitError(RuntimeError):
    pass


class RemainderTooLargeError(RuntimeError):
    pass


@dataclass
class GridFunction2D:
    """Samples g(t_i, x_j) on a uniform space-time grid; every sample carries weight dt dx.

    ``periodic`` marks the x-axis as a torus of length ``nx * dx``.
    """

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    periodic: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.xs = np.asarray(self.xs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.xs.size):
            raise ValueError("values must have shape (len(times), len(xs))")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def dx(self):
        return float(self.xs[1] - self.xs[0])

    @classmethod
    def from_function(cls, g, times, xs, periodic=True):
        T, X = np.meshgrid(times, xs, indexing="ij")
        return cls(times, xs, np.broadcast_to(g(T, X), T.shape).copy(), periodic)

    def with_values(self, values):
        return GridFunction2D(self.times, self.xs, values, self.periodic)

    def l2(self):
        return math.sqrt(float(np.sum(self.values ** 2)) * self.dt * self.dx)

    def sup(self):
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class ParabolicCube:
    """(t0 - 1/h(b), t0 + 1/h(b)) x (x0 - b, x0 + b) with ``h_b`` = h(b) (or a rescaled h)."""

    t0: float
    x0: float
    b: float
    h_b: float

    @property
    def half_time(self):
        return 1.0 / self.h_b

    @classmethod
    def build(cls, t0, x0, b, triple: ScaleTriple, time_scale: float = 1.0):
        """``time_scale`` multiplies h, for the rescaled h used in one regime."""
        return cls(float(t0), float(x0), float(b), float(triple.h(b)) * time_scale)

    def mask(self, g: GridFunction2D):
        tm = np.abs(g.times - self.t0) < self.half_time
        xm = np.abs(g.xs - self.x0) < self.b
        return tm, xm

    def inside(self, g: GridFunction2D):
        return (self.t0 - self.half_time >= g.times[0] - 0.5 * g.dt
                and self.t0 + self.half_time <= g.times[-1] + 0.5 * g.dt
                and self.x0 - self.b >= g.xs[0] - 0.5 * g.dx
                and self.x0 + self.b <= g.xs[-1] + 0.5 * g.dx)


def cube_mean_oscillation(g: GridFunction2D, cube: ParabolicCube) -> float:
    """Average of |g - g_Q| over the grid samples in Q."""
    if not cube.inside(g):
        raise ValueError("cube is not contained in the grid box")
    tm, xm = cube.mask(g)
    block = g.values[np.ix_(tm, xm)]
    if block.size == 0:
        raise ValueError("cube contains no grid samples")
    return float(np.mean(np.abs(block - block.mean())))


def _active_box(g: GridFunction2D, level=1e-2):
    """Bounding box of the samples with |g| >= level * max |g|."""
    a = np.abs(g.values)
    top = float(a.max())
    if top == 0.0:
        return (g.times[0], g.times[-1]), (g.xs[0], g.xs[-1])
    ti, xi = np.nonzero(a >= level * top)
    return (g.times[ti.min()], g.times[ti.max()]), (g.xs[xi.min()], g.xs[xi.max()])


def cube_family(g: GridFunction2D, triple: ScaleTriple, n_radii=8, n_centers=5,
                b_range=None, time_scale=1.0, active_level: Optional[float] = 1e-2):
    """Log-spaced radii, each with an n_centers x n_centers lattice of centers.

    The lattice spans the active region of g (samples with |g| at least
    ``active_level`` times its max; the whole box when ``active_level`` is
    None), shrunk where needed so that every cube lies inside the box.
    Radii whose cube cannot fit in the box are dropped.
    """
    Lx = g.xs[-1] - g.xs[0]
    Lt = g.times[-1] - g.times[0]
    lo, hi = b_range or (4 * g.dx, Lx / 4)
    if active_level is None:
        (ta, tb), (xa, xb) = (g.times[0], g.times[-1]), (g.xs[0], g.xs[-1])
    else:
        (ta, tb), (xa, xb) = _active_box(g, active_level)
    cubes = []
    for b in np.geomspace(lo, hi, n_radii):
        ht = 1.0 / (float(triple.h(b)) * time_scale)
        if 2 * ht > Lt or 2 * b > Lx:
            continue
        t_lo, t_hi = max(ta, g.times[0] + ht), min(tb, g.times[-1] - ht)
        x_lo, x_hi = max(xa, g.xs[0] + b), min(xb, g.xs[-1] - b)
        if t_hi < t_lo:
            t_lo = t_hi = min(max(0.5 * (ta + tb), g.times[0] + ht), g.times[-1] - ht)
        if x_hi < x_lo:
            x_lo = x_hi = min(max(0.5 * (xa + xb), g.xs[0] + b), g.xs[-1] - b)
        for t0 in np.linspace(t_lo, t_hi, n_centers):
            for x0 in np.linspace(x_lo, x_hi, n_centers):
                cubes.append(ParabolicCube.build(t0, x0, b, triple, time_scale))
    return cubes


def bmo_seminorm(g: GridFunction2D, cubes: Sequence[ParabolicCube]) -> float:
    """max of the mean oscillation over a finite family: a lower bound of the true seminorm."""
    if not cubes:
        raise ValueError("empty cube family")
    return max(cube_mean_oscillation(g, c) for c in cubes)


def sharp_function(g: GridFunction2D, cubes: Sequence[ParabolicCube]) -> GridFunction2D:
    """Discrete sharp function: at each sample, the largest oscillation of a family cube containing it."""
    if not cubes:
        raise ValueError("empty cube family")
    out = np.zeros_like(g.values)
    for c in cubes:
        osc = cube_mean_oscillation(g, c)
        tm, xm = c.mask(g)
        sub = out[np.ix_(tm, xm)]
        out[np.ix_(tm, xm)] = np.maximum(sub, osc)
    return g.with_values(out)


# --------------------------------------------------------------------------
# the operator L


def operator_L(f: GridFunction2D, field_: HeatKernelField, tol: float = 1e-4,
               max_halvings: int = 60) -> GridFunction2D:
    """L f by the q-kernel convolution on the torus, as an epsilon -> 0 limit.

    In x the convolution with q(tau, .) is the multiplier -psi e^{-tau psi}.
    In s the samples of f are joined linearly and integrated exactly against
    that kernel over [0, t - eps].  eps starts at one time step and is halved
    until the sup-norm change is below ``tol`` times the sup of the result.
    """
    if not f.periodic:
        raise ValueError("operator_L works on the periodic x-axis")
    N = f.xs.size
    if N & (N - 1):
        raise ValueError("number of x samples must be a power of two")
    period = N * f.dx / (2 * math.pi)
    lam = _symbol_on_grid(SpectralField(np.zeros(N), period), field_.exponent)
    fhat = np.fft.fft(f.values, axis=1)
    dt = f.dt
    M = f.times.size - 1
    z = np.broadcast_to(lam * dt, (M, N))
    decay, B, A = step_weights(z)
    # U_i = int_0^{t_i} e^{-(t_i - s) psi} fhat(s) ds, exact for linear fhat
    U = np.zeros_like(fhat)
    for n in range(M):
        U[n + 1] = decay[n] * U[n] + dt * (B[n] * fhat[n] + A[n] * fhat[n + 1])

    def layer(eps):
        # int_0^eps psi e^{-tau psi} fhat(t_i - tau) d tau, fhat linear on the last step
        z = lam * eps
        e0, Bz, Az = step_weights(z)
        slope = np.zeros_like(fhat)
        slope[1:] = (fhat[1:] - fhat[:-1]) / dt
        f_end = fhat
        f_start = fhat - eps * slope  # fhat(t_i - eps)
        out = lam * eps * (Bz * f_start + Az * f_end)
        out[0] = 0.0  # nothing to integrate at the initial time
        return out

    full = -lam * U
    prev = None
    eps = dt
    for _ in range(max_halvings):
        cur = np.fft.ifft(full + layer(eps), axis=1).real
        if prev is not None:
            scale = max(float(np.max(np.abs(cur))), 1e-300)
            if float(np.max(np.abs(cur - prev))) < tol * scale:
                return f.with_values(cur)
        prev = cur
        eps *= 0.5
    raise EpsilonLimitError("the principal-value limit did not settle")


# --------------------------------------------------------------------------
# tail integrals


@dataclass
class TailTable:
    """|D_x q| (m = 1) or |q| (m = 0) on a log grid in (s, y)."""

    m: int
    log_s: np.ndarray
    log_y: np.ndarray
    vals: np.ndarray  # shape (len(s), len(y))


def _tabulate(field_: HeatKernelField, m, s_lo, s_hi, y_lo, y_hi, s_per_decade, y_per_decade):
    ns = int(math.ceil(s_per_decade * math.log10(s_hi / s_lo))) + 1
    ny = int(math.ceil(y_per_decade * math.log10(y_hi / y_lo))) + 1
    s = np.geomspace(s_lo, s_hi, ns)
    y = np.geomspace(y_lo, y_hi, ny)
    vals = np.empty((ns, ny))
    for i, si in enumerate(s):
        vals[i] = np.abs(field_.applied_power(1, float(si), y, m=m))
    return TailTable(m, np.log(s), np.log(y), vals)


def _crop_weights(grid, lo, hi):
    """Trapezoid weights (in the grid variable) for int_lo^hi on a possibly cut grid."""
    w = np.zeros(grid.size)
    for i in range(grid.size - 1):
        a, b = grid[i], grid[i + 1]
        a2, b2 = max(a, lo), min(b, hi)
        if b2 <= a2:
            continue
        # linear interpolation of the integrand inside the cell
        h = b - a
        la, lb = (b - a2) / h, (b - b2) / h
        ra, rb = (a2 - a) / h, (b2 - a) / h
        seg = b2 - a2
        w[i] += 0.5 * seg * (la + lb)
        w[i + 1] += 0.5 * seg * (ra + rb)
    return w


def _integrate_table(tab: TailTable, s_lo, y_lo, y_hi):
    """int_{s >= s_lo} int_{y_lo <= y <= y_hi} F ds dy over the table (times 2 for +-y)."""
    ws = _crop_weights(tab.log_s, math.log(s_lo), tab.log_s[-1]) * np.exp(tab.log_s)
    wy = _crop_weights(tab.log_y, math.log(y_lo), math.log(y_hi)) * np.exp(tab.log_y)
    return 2.0 * float(ws @ tab.vals @ wy), ws, wy


def _tails(tab: TailTable, ws, wy, s_lo, y_upper_open: bool):
    """Remainders beyond the table: power-law extrapolation of the last two slices."""
    s = np.exp(tab.log_s)
    y = np.exp(tab.log_y)
    # s-tail: F(s) = int F(s, y) dy along the last two rows
    F = tab.vals @ wy
    rem_s = _power_tail(s[-2], s[-1], F[-2], F[-1])
    rem_y = 0.0
    if y_upper_open:
        G = ws @ tab.vals  # int F ds as a function of y
        rem_y = _power_tail(y[-2], y[-1], G[-2], G[-1])
    return 2.0 * rem_s, 2.0 * rem_y


def _power_tail(x0, x1, f0, f1):
    if f1 <= 0:
        return 0.0
    if f0 <= f1:
        return math.inf
    rate = math.log(f0 / f1) / math.log(x1 / x0)
    if rate <= 1.0:
        return math.inf
    return f1 * x1 / (rate - 1.0)


@dataclass
class TailResult:
    b: float
    value: float
    remainder: float
    scaled: float  # b * value for q1, value for q0

    def to_dict(self):
        return {"b": self.b, "value": self.value, "remainder": self.remainder,
                "scaled": self.scaled}


def _h(field_, triple, r, time_scale):
    return float(triple.h(r)) * time_scale


def tail_sweep(field_: HeatKernelField, which: str, bs=None, triple: Optional[ScaleTriple] = None,
               s_per_decade=8, y_per_decade=12, s_decades=4.0, y_max=1e6, y_min_q0=1e-6,
               time_scale=1.0, max_rel_remainder=0.05):
    """Tail integrals for every b in ``bs`` (default 2^-4 ... 2^4) from one shared table.

    ``which`` is "q1" (int_{1/h(b)}^inf int_{|y| >= b} |D_x q|) or "q0"
    (int_{1/h(4b)}^inf int_{|y| <= 4b} |q|).  Raises RemainderTooLargeError
    when the extrapolated remainder exceeds ``max_rel_remainder`` of a value.
    """
    if which not in ("q1", "q0"):
        raise ValueError("which must be 'q1' or 'q0'")
    if field_.d != 1:
        raise NotImplementedError("tail integrals are implemented in d = 1")
    triple = triple or field_.triple
    bs = np.asarray(bs if bs is not None else 2.0 ** np.arange(-4, 5), dtype=float)
    if which == "q1":
        s_starts = np.array([1.0 / _h(field_, triple, b, time_scale) for b in bs])
        y_lo, y_hi, m = float(bs.min()), y_max, 1
    else:
        s_starts = np.array([1.0 / _h(field_, triple, 4 * b, time_scale) for b in bs])
        y_lo, y_hi, m = y_min_q0, float(4 * bs.max()), 0
    s_lo = float(s_starts.min())
    s_hi = float(s_starts.max()) * 10 ** s_decades
    tab = _tabulate(field_, m, s_lo, s_hi, y_lo, y_hi, s_per_decade, y_per_decade)
    out = []
    for b, s0 in zip(bs, s_starts):
        if which == "q1":
            val, ws, wy = _integrate_table(tab, s0, b, y_hi)
            rs, ry = _tails(tab, ws, wy, s0, True)
        else:
            val, ws, wy = _integrate_table(tab, s0, y_lo, 4 * b)
            rs, ry = _tails(tab, ws, wy, s0, False)
            # the piece |y| < y_lo: |q| is integrable there, bounded by y_lo times the first column
            ry += 2.0 * y_lo * float(ws @ tab.vals[:, 0])
        rem = rs + ry
        if not rem <= max_rel_remainder * val:
            raise RemainderTooLargeError(
                f"{which} at b={b:g}: remainder {rem:.3g} exceeds {max_rel_remainder:.0%} of "
                f"{val:.3g}")
        total = val + rem
        out.append(TailResult(b=float(b), value=total, remainder=rem,
                              scaled=float(b * total) if which == "q1" else total))
    return out


def tail_integral_q1(field_: HeatKernelField, b: float, **kw) -> float:
    """int_{1/h(b)}^inf int_{|y| >= b} |D_x q(s, y)| dy ds."""
    return tail_sweep(field_, "q1", bs=[b], **kw)[0].value


def tail_integral_q0(field_: HeatKernelField, b: float, **kw) -> float:
    """int_{1/h(4b)}^inf int_{|y| <= 4b} |q(s, y)| dy ds."""
    return tail_sweep(field_, "q0", bs=[b], **kw)[0].value


# --------------------------------------------------------------------------
# BMO estimate and Fefferman-Stein


def bump_ensemble(n=10, seed=0, T_support=(0.2, 1.0), width=(0.2, 0.8)):
    """Bounded, compactly supported f(t, x): products of smooth time and space bumps.

    Returns a list of (callable, description) pairs.
    """
    rng = np.random.default_rng(seed)

    def smooth_bump(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out

    ens = []
    for i in range(n):
        t0, t1 = np.sort(rng.uniform(*T_support, 2))
        t1 = max(t1, t0 + 0.2)
        w = rng.uniform(*width)
        c = rng.uniform(-1.0, 1.0)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
        osc = rng.integers(0, 3)

        def f(t, x, t0=t0, t1=t1, w=w, c=c, amp=amp, osc=osc):
            tb = smooth_bump((2 * t - t0 - t1) / (t1 - t0))
            xb = smooth_bump((x - c) / w) * np.cos(osc * math.pi * (x - c) / w)
            return amp * tb * xb

        ens.append((f, {"t": [float(t0), float(t1)], "width": float(w), "center": float(c),
                        "amp": float(amp), "osc": int(osc)}))
    return ens


def _grid_for(field_, N, nt, T):
    times = np.linspace(0.0, T, nt + 1)
    xs = SpectralField.axis(N, 1.0)
    return times, xs


def bmo_estimate_check(field_: HeatKernelField, ensemble=None, N=128, nt=256, T=None,
                       triple=None, refine=True, n_radii=8, n_centers=5):
    """Ratios bmo(L f) / ||f||_inf over an ensemble, with a grid and cube-family refinement.

    Returns a dict with the per-function ratios, their max, the refined max
    and the relative drift.
    """
    triple = triple or field_.triple
    ensemble = ensemble or bump_ensemble()
    if T is None:
        T = max(2.0, 3.0 * 2.0 / float(triple.h(math.pi / 4)))

    def run(N_, nt_, nr, nc):
        times, xs = _grid_for(field_, N_, nt_, T)
        out = []
        for fn, _ in ensemble:
            f = GridFunction2D.from_function(fn, times, xs)
            Lf = operator_L(f, field_)
            cubes = cube_family(Lf, triple, nr, nc, b_range=(math.pi / 32, math.pi / 4))
            out.append(bmo_seminorm(Lf, cubes) / f.sup())
        return np.array(out)

    r0 = run(N, nt, n_radii, n_centers)
    res = {"ratios": r0.tolist(), "max": float(r0.max()), "N": N, "nt": nt, "T": T}
    if refine:
        r1 = run(2 * N, 2 * nt, 2 * n_radii, 2 * n_centers - 1)
        res["ratios_refined"] = r1.tolist()
        res["max_refined"] = float(r1.max())
        res["drift"] = abs(float(r1.max()) / float(r0.max()) - 1.0)
    res["finite"] = bool(np.all(np.isfinite(r0)))
    return res


def fefferman_stein_constant(field_: HeatKernelField, ensemble=None, N=128, nt=256, T=None,
                             triple=None, n_radii=8, n_centers=5):
    """Observed constant C with C^-1 ||g#||_2 <= ||g||_2 <= C ||g#||_2 for g = L f - mean,

    together with the observed L_2 bound ||L f||_2 / ||f||_2.
    """
    triple = triple or field_.triple
    ensemble = ensemble or bump_ensemble()
    if T is None:
        T = max(2.0, 3.0 * 2.0 / float(triple.h(math.pi / 4)))
    times, xs = _grid_for(field_, N, nt, T)
    fs, l2 = [], []
    for fn, _ in ensemble:
        f = GridFunction2D.from_function(fn, times, xs)
        Lf = operator_L(f, field_)
        l2.append(Lf.l2() / f.l2())
        g = Lf.with_values(Lf.values - Lf.values.mean())
        cubes = cube_family(g, triple, n_radii, n_centers, b_range=(math.pi / 32, math.pi / 4))
        gs = sharp_function(g, cubes)
        ratio = g.l2() / gs.l2()
        fs.append(max(ratio, 1.0 / ratio))
    return {"fs_constant": float(max(fs)), "fs_ratios": fs, "l2_constant": float(max(l2)),
            "l2_ratios": l2}
