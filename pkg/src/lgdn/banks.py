"""Fixed-capacity FIFO banks of feature vectors used as contrastive negatives.

A bank behaves exactly like "append to an unbounded list, keep the last
`capacity` entries".  Only gradient-free vectors may enter; stored entries are
never rewritten (features stay as the slow encoders produced them).
"""

from __future__ import annotations

import numpy as np

from .errors import BatchLargerThanCapacity, ShapeMismatch
from .tensor import Tensor


class MemoryBank:
    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self._entries: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._entries)

    def enqueue(self, batch) -> "MemoryBank":
        """Append vectors in order, evicting oldest entries beyond capacity."""
        vecs = [self._coerce(v) for v in batch]
        if len(vecs) > self.capacity:
            raise BatchLargerThanCapacity(
                f"batch of {len(vecs)} exceeds capacity {self.capacity}")
        self._entries.extend(vecs)
        overflow = len(self._entries) - self.capacity
        if overflow > 0:
            del self._entries[:overflow]
        return self

    def negatives(self) -> list[np.ndarray]:
        """Snapshot copy of current entries, oldest first."""
        return [v.copy() for v in self._entries]

    def matrix(self) -> np.ndarray | None:
        """Entries stacked into an (n, dim) array; None when empty."""
        if not self._entries:
            return None
        return np.stack(self._entries)

    def state(self) -> list[list[float]]:
        return [v.tolist() for v in self._entries]

    def load_state(self, rows) -> None:
        self._entries = []
        self.enqueue(np.asarray(row, dtype=np.float64) for row in rows)

    def _coerce(self, v) -> np.ndarray:
        if isinstance(v, Tensor):
            if v.requires_grad:
                raise ValueError("gradient-bearing tensor must not enter a bank")
            v = v.data
        arr = np.asarray(v, dtype=np.float64).copy()
        if arr.shape != (self.dim,):
            raise ShapeMismatch(f"bank expects vectors of shape ({self.dim},)")
        return arr
