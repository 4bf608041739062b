import itertools
import random

import pytest

from hbsim.core import ExtendedTransaction

_counter = itertools.count(1)


def make_tx(value, size_bytes, **kwargs):
    """Build a transaction with a deterministic unique id."""
    kwargs.setdefault("id", next(_counter).to_bytes(32, "big"))
    return ExtendedTransaction(value=value, size_bytes=size_bytes, **kwargs)


@pytest.fixture
def rng():
    return random.Random(20160101)


@pytest.fixture
def tx_factory():
    return make_tx
