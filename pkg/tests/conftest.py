import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anisoppa.prox import Cosh, ExpPenalty, IsotropicPower, SeparablePower

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

KERNELS = {
    "sep1.5": SeparablePower(1.5),
    "sep2": SeparablePower(2),
    "sep3": SeparablePower(3),
    "sep4": SeparablePower(4),
    "iso3": IsotropicPower(3),
    "iso4/3": IsotropicPower("4/3"),
    "cosh": Cosh(),
    "exp": ExpPenalty(0.01),
    "sep3_scaled": SeparablePower(3, scale=0.5),
}


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(params=sorted(KERNELS), ids=sorted(KERNELS))
def kernel(request):
    return KERNELS[request.param]
