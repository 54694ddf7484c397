import numpy as np
import pytest
from hypothesis import given, strategies as st

from slowvary import _fallback, kernels

compiled = pytest.importorskip("slowvary._kernels")


@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=300),
       st.floats(min_value=-3, max_value=3))
def test_cos_sum_backends_agree(nr, nrho, phase):
    rng = np.random.default_rng(nr * 1000 + nrho)
    r = rng.uniform(0, 50, nr)
    rho = rng.uniform(0, 20, nrho)
    a = rng.standard_normal(nrho)
    exact = (a[None, :] * np.cos(rho[None, :] * r[:, None] + phase)).sum(axis=1)
    assert np.allclose(compiled.cos_sum(r, rho, a, phase), exact, atol=1e-10)
    assert np.allclose(_fallback.cos_sum(r, rho, a, phase), exact, atol=1e-10)


@given(st.integers(min_value=1, max_value=30), st.integers(min_value=1, max_value=20))
def test_duhamel_sweep_backends_agree(M, K):
    rng = np.random.default_rng(M * 100 + K)
    decay = rng.uniform(0, 1, (M, K))
    w_old = rng.uniform(0, 1, (M, K))
    w_new = rng.uniform(0, 1, (M, K))
    f = rng.standard_normal((M + 1, K)) + 1j * rng.standard_normal((M + 1, K))
    a = compiled.duhamel_sweep(decay, w_old, w_new, f)
    b = _fallback.duhamel_sweep(decay, w_old, w_new, f)
    u = np.zeros_like(f)
    for n in range(M):
        u[n + 1] = decay[n] * u[n] + w_old[n] * f[n] + w_new[n] * f[n + 1]
    assert np.allclose(a, u, atol=1e-12) and np.allclose(b, u, atol=1e-12)


def test_backend_selected():
    assert kernels.BACKEND == "cython"


def test_fallback_forced_by_environment():
    import os
    import subprocess
    import sys
    env = dict(os.environ, SLOWVARY_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import slowvary; print(slowvary.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
