import numpy as np
import pytest

from embattr import kernels


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run kernel-touching tests on both implementations."""
    previous = kernels.get_backend()
    try:
        kernels.set_backend(request.param)
    except Exception:
        pytest.skip(f"{request.param} backend unavailable")
    yield request.param
    kernels.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(0xBEEF)
