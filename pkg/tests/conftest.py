import json
import os

import numpy as np
import pytest

from sepmix.env import ConductanceProfile, ProfileSpec, build_profile

GOLDENS = json.load(open(os.path.join(os.path.dirname(__file__), "goldens", "goldens.json")))


@pytest.fixture(scope="session")
def goldens():
    return GOLDENS


@pytest.fixture
def homog():
    def make(n):
        return build_profile(ProfileSpec("homogeneous"), n)

    return make


@pytest.fixture
def random_profile():
    def make(n, seed=0, lo=0.5, hi=2.0):
        rng = np.random.default_rng(seed)
        return ConductanceProfile(n, rng.uniform(lo, hi, n - 1))

    return make
