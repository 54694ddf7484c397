# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the two hot loops: oscillatory node sums and the
per-mode exponential-integrator recursion."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos

cnp.import_array()


def cos_sum(r, rho, a, double phase=0.0):
    """out[i] = sum_j a[j] cos(rho[j] r[i] + phase)."""
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(rho, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0], m = pv.shape[0], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double s, x
    with nogil:
        for i in range(n):
            s = 0.0
            x = rv[i]
            for j in range(m):
                s = s + av[j] * cos(pv[j] * x + phase)
            ov[i] = s
    return out


def duhamel_sweep(decay, w_old, w_new, f):
    """u[0] = 0,  u[n+1] = decay[n] u[n] + w_old[n] f[n] + w_new[n] f[n+1]."""
    cdef const double[:, ::1] D = np.ascontiguousarray(decay, dtype=np.float64)
    cdef const double[:, ::1] A = np.ascontiguousarray(w_old, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(w_new, dtype=np.float64)
    fc = np.ascontiguousarray(f, dtype=np.complex128)
    cdef const double complex[:, ::1] F = fc
    cdef Py_ssize_t M = D.shape[0], K = D.shape[1], n, k
    u = np.zeros((M + 1, K), dtype=np.complex128)
    cdef double complex[:, ::1] U = u
    with nogil:
        for n in range(M):
            for k in range(K):
                U[n + 1, k] = D[n, k] * U[n, k] + A[n, k] * F[n, k] + B[n, k] * F[n + 1, k]
    if not np.iscomplexobj(f):
        return u.real.copy()
    return u
