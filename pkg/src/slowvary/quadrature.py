"""Quadrature primitives shared by the scale-function, symbol and heat-kernel code.

Three tools live here:

* :func:`adaptive_quad` -- vectorised adaptive bisection with the embedded
  Gauss--Kronrod (7, 15) pair.
* :func:`panel_rule` -- composite Gauss--Legendre nodes on an arbitrary set of
  panel edges.
* :func:`wynn_epsilon` -- Wynn's epsilon algorithm, used to sum the alternating
  series produced by half-period panels of oscillatory integrals.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "QuadratureError",
    "adaptive_quad",
    "gauss_legendre",
    "panel_rule",
    "geometric_edges",
    "refine_edges",
    "wynn_epsilon",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge on ``interval``."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


# Gauss-Kronrod (7, 15) abscissae and weights on [-1, 1] (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_G_WEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes.
_G_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def adaptive_quad(f, a, b, rtol=1e-8, atol=1e-14, max_depth=60, breakpoints=(),
                  max_intervals=200000, min_panels=1):
    """Integrate a vectorised ``f`` over the finite interval ``[a, b]``.

    Intervals are bisected breadth-first; every pass evaluates ``f`` once on the
    nodes of all still-active intervals.  An interval is accepted when its
    Kronrod/Gauss discrepancy is below its share of the global tolerance.

    ``breakpoints`` inside ``(a, b)`` become initial panel edges; kinks of the
    integrand should always be passed here.

    Raises
    ------
    QuadratureError
        If an interval reaches ``max_depth`` bisections without converging.
        The failing subinterval is reported in the message and attribute.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    pts = sorted({a, b, *[float(p) for p in breakpoints if a < p < b]})
    if min_panels > 1:
        # a kink can fool a single Kronrod/Gauss comparison; start from a split
        pts = sorted(set(np.concatenate([np.linspace(a, b, min_panels + 1), pts]).tolist()))
    lo = np.array(pts[:-1])
    hi = np.array(pts[1:])
    depth = np.zeros(lo.size, dtype=int)
    total = 0.0
    err_total = 0.0
    length = b - a
    while lo.size:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        x = mid[:, None] + half[:, None] * _GK_NODES[None, :]
        fx = np.asarray(f(x), dtype=float).reshape(x.shape)
        if not np.all(np.isfinite(fx)):
            bad = np.where(~np.all(np.isfinite(fx), axis=1))[0][0]
            raise QuadratureError(
                f"non-finite integrand on [{lo[bad]:.6g}, {hi[bad]:.6g}]",
                (lo[bad], hi[bad]))
        kron = half * (fx @ _GK_WEIGHTS)
        gauss = half * (fx @ _G_WEIGHTS)
        err = np.abs(kron - gauss)
        estimate = total + kron.sum()
        tol_abs = max(atol, rtol * abs(estimate))
        share = tol_abs * (hi - lo) / length
        done = err <= np.maximum(share, 50 * np.finfo(float).eps * np.abs(kron))
        total += kron[done].sum()
        err_total += err[done].sum()
        if np.all(done):
            break
        keep = ~done
        too_deep = keep & (depth >= max_depth)
        if np.any(too_deep):
            i = np.where(too_deep)[0][0]
            raise QuadratureError(
                f"quadrature did not converge on subinterval [{lo[i]:.6g}, {hi[i]:.6g}] "
                f"after {max_depth} bisections", (lo[i], hi[i]))
        lo, hi, mid, depth = lo[keep], hi[keep], mid[keep], depth[keep] + 1
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        depth = np.concatenate([depth, depth])
        if lo.size > max_intervals:
            raise QuadratureError(
                f"quadrature exceeded {max_intervals} active intervals on [{a:.6g}, {b:.6g}]",
                (a, b))
    return sign * total


def panel_rule(edges, n=16):
    """Composite Gauss--Legendre nodes and weights for the panels ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def geometric_edges(lo, hi, ratio=2.0):
    """Edges ``lo = e_0 < ... < e_k = hi`` growing geometrically by ``ratio``."""
    if lo <= 0 or hi <= lo:
        raise ValueError("need 0 < lo < hi")
    k = max(1, int(np.ceil(np.log(hi / lo) / np.log(ratio))))
    return np.geomspace(lo, hi, k + 1)


def refine_edges(edges, max_len):
    """Split every panel longer than ``max_len`` into equal pieces."""
    edges = np.asarray(edges, dtype=float)
    out = [edges[:1]]
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(np.ceil((b - a) / max_len)))
        out.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(out)


def wynn_epsilon(partial_sums):
    """Limit of a sequence of partial sums accelerated by Wynn's epsilon table.

    Returns the last even-column entry of the table; the standard choice for
    alternating series with smoothly varying terms.
    """
    s = np.asarray(partial_sums, dtype=float)
    n = s.size
    if n < 3:
        return float(s[-1])
    prev = np.zeros(n + 1)
    cur = s.copy()
    best = float(s[-1])
    best_delta = np.inf
    col = 0
    # e_{k+1}^{(j)} = e_{k-1}^{(j+1)} + 1 / (e_k^{(j+1)} - e_k^{(j)})
    while cur.size > 1:
        diff = np.diff(cur)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = prev[1:cur.size] + 1.0 / diff
        col += 1
        if not np.all(np.isfinite(nxt)):
            break
        if col % 2 == 0 and nxt.size >= 2:
            delta = abs(nxt[-1] - nxt[-2])
            if delta <= best_delta:
                best_delta = delta
                best = float(nxt[-1])
        prev, cur = cur, nxt
    return best
