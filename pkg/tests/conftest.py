import os
import random
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chopcrypt import KeyPairing


def make_rng(seed: int):
    """Deterministic byte source with the same call shape as os.urandom."""
    r = random.Random(seed)
    return r.randbytes


@pytest.fixture
def keys():
    return KeyPairing.generate(os.urandom)


@pytest.fixture
def det_keys():
    return KeyPairing(k_large=bytes(range(16)), k_small=bytes(range(16, 32)))
