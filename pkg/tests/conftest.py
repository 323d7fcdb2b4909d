import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from contaminet import kernels


@pytest.fixture(params=kernels.available())
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    previous = kernels.select(request.param)
    yield request.param
    kernels.select(previous)
