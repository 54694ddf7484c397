"""Numerical toolkit for nonlocal parabolic equations driven by jump kernels
whose intensity may vary slowly at the origin.

Submodules
----------
scale_functions    profiles ell and the scale functions K, L, h
jump_kernels       kernel families, the T operator, H(d, m) certificates
char_exponent      characteristic exponent psi and its cache
heat_kernel        transition densities and derivative bounds by Fourier inversion
nonlocal_operator  spectral and quadrature forms of the operator
pde_solver         spectral Duhamel solver and mixed-norm diagnostics
estimate_harness   parabolic cubes, BMO, tail integrals
cli                command line front end
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
