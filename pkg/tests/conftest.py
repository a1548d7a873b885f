import sys
from pathlib import Path

import numpy as np
import pytest

TESTS_DIR = Path(__file__).parent
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))

from d2drelay.queues import BS
from d2drelay.stability import PowerVector, StabilityInstance


def make_tiny_instance() -> StabilityInstance:
    """2-MS, 2-topology, 3-power-vector instance with a hand-built rate table.

    Topology 0 has MS0 far from the BS and MS1 near; topology 1 mirrors it.
    Direct rates are 1 (far) and 3 (near) packets/slot, D2D hops run at 4;
    relaying costs 0.5 mW against 1.0 mW for a direct link, with an average
    power budget of 0.8 mW per MS.
    """
    vectors = [
        PowerVector([BS, BS], [1.0, 1.0]),
        PowerVector([1, BS], [0.5, 1.0]),
        PowerVector([BS, 0], [1.0, 0.5]),
    ]
    rates = np.array(
        [
            [[1, 3], [4, 3], [1, 4]],
            [[3, 1], [4, 1], [3, 4]],
        ],
        dtype=float,
    )
    return StabilityInstance([0.5, 0.5], vectors, rates, [0.8, 0.8])


TINY_GRID_AXIS = np.linspace(0.0, 2.4, 20)


@pytest.fixture(scope="session")
def tiny_instance() -> StabilityInstance:
    return make_tiny_instance()
