"""FIFO bank against a truncated-tail shadow model."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgdn.banks import MemoryBank
from lgdn.errors import BatchLargerThanCapacity, ShapeMismatch
from lgdn.tensor import parameter

DIM = 3


def _vec(x):
    return np.full(DIM, float(x))


def test_fifo_by_construction():
    bank = MemoryBank(capacity=4, dim=DIM)
    bank.enqueue([_vec(0), _vec(1)])
    bank.enqueue([_vec(2), _vec(3)])
    bank.enqueue([_vec(4), _vec(5)])
    got = [v[0] for v in bank.negatives()]
    assert got == [2.0, 3.0, 4.0, 5.0]


def test_enqueue_into_empty_is_identity():
    bank = MemoryBank(capacity=8, dim=DIM)
    bank.enqueue([_vec(7), _vec(8)])
    assert [v[0] for v in bank.negatives()] == [7.0, 8.0]


def test_batch_larger_than_capacity_rejected():
    bank = MemoryBank(capacity=2, dim=DIM)
    with pytest.raises(BatchLargerThanCapacity):
        bank.enqueue([_vec(i) for i in range(3)])


def test_wrong_width_rejected():
    bank = MemoryBank(capacity=2, dim=DIM)
    with pytest.raises(ShapeMismatch):
        bank.enqueue([np.zeros(DIM + 1)])


def test_gradient_bearing_tensor_rejected():
    bank = MemoryBank(capacity=2, dim=DIM)
    with pytest.raises(ValueError):
        bank.enqueue([parameter(np.zeros(DIM))])


def test_snapshot_is_isolated():
    bank = MemoryBank(capacity=4, dim=DIM)
    assert bank.negatives() == []
    bank.enqueue([_vec(1)])
    snap = bank.negatives()
    assert len(snap) == 1 and snap[0][0] == 1.0
    snap[0][0] = 99.0           # caller mutation
    bank.enqueue([_vec(2)])     # later growth
    assert bank.negatives()[0][0] == 1.0
    assert len(snap) == 1       # snapshot did not grow


def test_thousand_random_sequences_match_shadow_model():
    rng = np.random.default_rng(42)
    for trial in range(1000):
        capacity = int(rng.integers(1, 65))
        bank = MemoryBank(capacity=capacity, dim=DIM)
        shadow: list[float] = []
        for _ in range(int(rng.integers(1, 20))):
            size = int(rng.integers(0, capacity + 1))
            batch = [float(x) for x in rng.normal(size=size)]
            bank.enqueue([_vec(x) for x in batch])
            shadow.extend(batch)
            shadow = shadow[-capacity:]
            assert len(bank) <= capacity
            assert [v[0] for v in bank.negatives()] == shadow


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=16),
       st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False,
                                   width=32),
                         max_size=16),
                max_size=12))
def test_shadow_model_property(capacity, batches):
    bank = MemoryBank(capacity=capacity, dim=DIM)
    shadow: list[float] = []
    for batch in batches:
        batch = batch[:capacity]
        bank.enqueue([_vec(x) for x in batch])
        shadow.extend(float(x) for x in batch)
        shadow = shadow[-capacity:]
    assert [v[0] for v in bank.negatives()] == shadow
    assert (bank.matrix() is None) == (not shadow)
