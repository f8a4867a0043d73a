import numpy as np
import pytest

from oploc.integrator import IntegratorConfig
from oploc.model import MeasurementSchedule


@pytest.fixture
def rotor():
    return MeasurementSchedule(tau_x=1.0, epsilon=0.0, tau_m=0.025, capital_lambda=1.0)


@pytest.fixture
def weak_kick():
    return MeasurementSchedule(tau_x=1.0, epsilon=0.1, tau_m=0.025, capital_lambda=1.0)


@pytest.fixture
def half_kick():
    return MeasurementSchedule(tau_x=1.0, epsilon=0.5, tau_m=0.025, capital_lambda=1.0)


@pytest.fixture
def strong_kick():
    return MeasurementSchedule(tau_x=1.0, epsilon=0.99, tau_m=0.025, capital_lambda=1.0)


@pytest.fixture
def bs_cfg():
    return IntegratorConfig(method="bs")


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
