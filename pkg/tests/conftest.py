import pytest
from hypothesis import settings

from gconv.drivers import Driver
from gconv.expectation import CylinderPayoff
from gconv.pde import Envelope

settings.register_profile("gconv", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("gconv")


@pytest.fixture
def d12():
    return Driver(1.0, 2.0)


def one(f, env=Envelope(1.0, 1), t=1.0):
    return CylinderPayoff((t,), f, env)


SQUARE = lambda x: x * x
NEG_SQUARE = lambda x: -x * x
