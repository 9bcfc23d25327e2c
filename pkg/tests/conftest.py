import numpy as np
import pytest

from vlmguard.embedspace import Projector, ToyDualEncoder, Vocabulary
from vlmguard.harness.fixtures import make_suite


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def encoder():
    return ToyDualEncoder()


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.synthetic()


@pytest.fixture(scope="session")
def identity_projector():
    return Projector.identity()


@pytest.fixture(scope="session")
def small_suite():
    return make_suite(6, 6, 6, seed=7)


@pytest.fixture(scope="session")
def eval_suite():
    """The 200-sample default suite."""
    return make_suite(seed=0)


@pytest.fixture(scope="session")
def calibration_suite():
    """A disjoint 100-sample suite used only for threshold fitting."""
    return make_suite(35, 32, 33, seed=1)
