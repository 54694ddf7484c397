"""Compiled vs numpy hot loops.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall times for ``cos_sum`` (the Fourier inversion inner sum)
and ``duhamel_sweep`` (the exponential-integrator recursion) with both
backends, and checks that they agree.
"""
import argparse
import timeit

import numpy as np

from slowvary import _fallback

try:
    from slowvary import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    r = rng.uniform(0, 50, 256)
    rho = rng.uniform(0, 200, 4096)
    a = rng.standard_normal(4096)
    M, K = 2000, 128
    decay = rng.uniform(0, 1, (M, K))
    w_old = rng.uniform(0, 1, (M, K))
    w_new = rng.uniform(0, 1, (M, K))
    f = rng.standard_normal((M + 1, K)) + 1j * rng.standard_normal((M + 1, K))
    return {
        "cos_sum 256x4096": ("cos_sum", (r, rho, a, 0.0)),
        "duhamel_sweep 2000x128": ("duhamel_sweep", (decay, w_old, w_new, f)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':26s} {'numpy [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for label, (name, argv) in cases(rng).items():
        py = getattr(_fallback, name)
        t_py = min(timeit.repeat(lambda: py(*argv), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{label:26s} {1e3 * t_py:12.2f} {'n/a':>12s} {'':>8s}")
            continue
        cy = getattr(compiled, name)
        t_cy = min(timeit.repeat(lambda: cy(*argv), number=1, repeat=args.repeat))
        assert np.allclose(py(*argv), cy(*argv), rtol=1e-10, atol=1e-10)
        print(f"{label:26s} {1e3 * t_py:12.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
