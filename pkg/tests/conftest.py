import math

import numpy as np
import pytest

from etfe_lab import RationalTransferFunction, SimulationSpec, build_excitation, certify

PLANT = {"numerator": [0.0, 0.12, 0.18], "denominator": [1.0, -1.4, 1.443, -1.123, 0.7729]}
AR1 = {"numerator": [1.0], "denominator": [1.0, -0.2]}


@pytest.fixture(scope="session")
def plant():
    return RationalTransferFunction.from_dict(PLANT)


@pytest.fixture(scope="session")
def ar1():
    return RationalTransferFunction.from_dict(AR1)


@pytest.fixture(scope="session")
def ref_spec(plant, ar1):
    return SimulationSpec(plant, ar1, noise_std=math.sqrt(0.1))


@pytest.fixture(scope="session")
def noiseless_spec(plant, ar1):
    return SimulationSpec(plant, ar1, noise_std=0.0)


@pytest.fixture(scope="session")
def prbs7():
    return certify(build_excitation({"type": "prbs", "order": 7}))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
