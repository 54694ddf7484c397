"""Selects the compiled hot loops when the extension is built, numpy otherwise.

Set ``SLOWVARY_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
cos_sum = _fallback.cos_sum
duhamel_sweep = _fallback.duhamel_sweep

if os.environ.get("SLOWVARY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        cos_sum = _compiled.cos_sum
        duhamel_sweep = _compiled.duhamel_sweep

__all__ = ["BACKEND", "cos_sum", "duhamel_sweep"]
