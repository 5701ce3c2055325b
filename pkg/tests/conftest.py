import sys
from pathlib import Path

import numpy as np
import pytest

from seqsplit.core import UserSequence

sys.path.insert(0, str(Path(__file__).parent))


def mkseq(user, items, times=None):
    if times is None:
        times = list(range(1, len(items) + 1))
    return UserSequence(user, list(items), list(times))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
