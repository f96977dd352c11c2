"""Shared fixtures: the small periodic model is expensive enough to build
once per session and reuse across test modules."""

import numpy as np
import pytest

from polaronlab.config import load_config
from polaronlab.experiments import ModelBundle, build_bundle


@pytest.fixture(scope="session")
def desk_small_config():
    return load_config(preset="desk-small")


@pytest.fixture(scope="session")
def bundle(desk_small_config) -> ModelBundle:
    return build_bundle(desk_small_config)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
