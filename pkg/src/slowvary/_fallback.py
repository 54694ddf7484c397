"""Pure numpy versions of the hot loops in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 21


def cos_sum(r, rho, a, phase=0.0):
    """out[i] = sum_j a[j] cos(rho[j] r[i] + phase)."""
    r = np.ascontiguousarray(r, dtype=float)
    rho = np.ascontiguousarray(rho, dtype=float)
    a = np.ascontiguousarray(a, dtype=float)
    out = np.empty(r.size)
    step = max(1, _CHUNK // max(rho.size, 1))
    for s in range(0, r.size, step):
        blk = r[s:s + step]
        out[s:s + step] = np.cos(np.outer(blk, rho) + phase) @ a
    return out


def duhamel_sweep(decay, w_old, w_new, f):
    """Exponential-integrator recursion over time steps for every mode.

    u[0] = 0,  u[n+1] = decay[n] u[n] + w_old[n] f[n] + w_new[n] f[n+1].

    ``decay``, ``w_old``, ``w_new`` have shape (M, K) (real); ``f`` has shape
    (M + 1, K) and may be complex.
    """
    M = decay.shape[0]
    u = np.zeros(f.shape, dtype=f.dtype)
    for n in range(M):
        u[n + 1] = decay[n] * u[n] + w_old[n] * f[n] + w_new[n] * f[n + 1]
    return u
