"""Counting accountant for scratch buffers inside a seq2seq forward.

Forward functions register every working buffer they create with
:meth:`MemoryAccountant.track` and hand it back with :meth:`release`.
Parameters, the input and the output tensor are never registered, so the
high-water mark is the transient working set of the mechanism itself.
"""

from __future__ import annotations

import numpy as np


class MemoryAccountant:
    def __init__(self):
        self.live = 0
        self.peak = 0
        self.allocations = 0
        self._held: dict[int, int] = {}

    def track(self, arr: np.ndarray) -> np.ndarray:
        key = id(arr)
        if key in self._held:
            return arr
        self._held[key] = arr.nbytes
        self.live += arr.nbytes
        self.allocations += 1
        if self.live > self.peak:
            self.peak = self.live
        return arr

    def empty(self, shape) -> np.ndarray:
        return self.track(np.empty(shape, dtype=np.float64))

    def transient(self, nbytes: int) -> None:
        """Account a short-lived buffer that is freed before the next call."""
        if self.live + nbytes > self.peak:
            self.peak = self.live + nbytes

    def release(self, *arrays) -> None:
        for arr in arrays:
            if arr is None:
                continue
            nbytes = self._held.pop(id(arr), None)
            if nbytes is not None:
                self.live -= nbytes

    def __repr__(self) -> str:
        return f"MemoryAccountant(live={self.live}, peak={self.peak})"


class NullAccountant:
    """No-op stand-in used when timing, so accounting never skews latency."""

    live = 0
    peak = 0

    def track(self, arr):
        return arr

    def empty(self, shape):
        return np.empty(shape, dtype=np.float64)

    def transient(self, nbytes):
        pass

    def release(self, *arrays):
        pass


NULL = NullAccountant()
