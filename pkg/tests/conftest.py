import numpy as np
import pytest

from protofed.prototypes import GlobalPrototypeSet, Prototype


def make_global_set(rng, num_classes, per_class, dim, round_index=1):
    """Random non-negative prototype set, `per_class` vectors per class."""
    gs = GlobalPrototypeSet(round_index=round_index)
    for m in range(num_classes):
        gs.by_class[m] = [
            Prototype(m, rng.uniform(0.1, 1.0, dim), member_count=3)
            for _ in range(per_class)
        ]
    return gs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
