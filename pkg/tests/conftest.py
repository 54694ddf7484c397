import json
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from slowvary.char_exponent import CharExponent
from slowvary.heat_kernel import HeatKernelField
from slowvary.jump_kernels import builtin_kernel

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

GOLDENS = json.loads((Path(__file__).parent / "oracles" / "goldens.json").read_text())


@lru_cache(maxsize=None)
def kernel(family, alpha=1.0, d=1, base="log", n=5):
    return builtin_kernel(family, alpha, d, base=base, n=n)


@lru_cache(maxsize=None)
def exponent(family, alpha=1.0, d=1):
    return CharExponent(kernel(family, alpha, d))


@lru_cache(maxsize=None)
def heat(family, alpha=1.0, d=1):
    return HeatKernelField(exponent(family, alpha, d))


@pytest.fixture(scope="session")
def goldens():
    return GOLDENS
