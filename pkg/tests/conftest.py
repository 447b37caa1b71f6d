import math

import numpy as np
import pytest
from hypothesis import settings

from mvutil.statespace import BenchmarkMap, PricingKernel, StateDistribution, StateModel
from mvutil.solver import Problem
from mvutil.utility import two_piece_family

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_piece_problem():
    model = StateModel(StateDistribution.uniform(1, 2), PricingKernel.identity())
    return Problem(model, two_piece_family(), BenchmarkMap.constant(0.0), 7 / 18)


@pytest.fixture(scope="session")
def lognormal_model():
    return StateModel(StateDistribution.standard_normal(), PricingKernel.lognormal(0.03, 0.3, 10.0))
