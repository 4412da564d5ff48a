"""Deterministic random streams with a frozen, named algorithm.

Every stochastic choice in this package (instance generation, component
sampling, initial iterates, test sweeps) is drawn from ``RandomStream``,
which implements SplitMix64 (Steele, Lea & Flood; the java.util
.SplittableRandom generator) evaluated in counter mode so blocks can be
produced with vectorized uint64 arithmetic.  Uniform doubles take the top
53 bits of each output word; standard normals use the Box-Muller
transform on consecutive uniform pairs; bounded integers use rejection
sampling below the largest multiple of the bound.

The integer stream is reproducible bit-for-bit across platforms and
releases by construction (pure wrapping uint64 arithmetic).  Derived
floating-point streams additionally rely on the platform libm for
``log``/``cos``/``sin``, which is correctly rounded on all supported
targets in practice; the raw word stream is the portability contract.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_MUL_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_MUL_2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1
_INV_2_53 = float(2.0**-53)


def _mix64(z: NDArray[np.uint64]) -> NDArray[np.uint64]:
    """SplitMix64 finalizer on an array of uint64 words."""
    z = (z ^ (z >> np.uint64(30))) * _MIX_MUL_1
    z = (z ^ (z >> np.uint64(27))) * _MIX_MUL_2
    return z ^ (z >> np.uint64(31))


class RandomStream:
    """One independent SplitMix64 sequence identified by (seed, stream).

    Word ``i`` of the sequence is ``mix64(s0 + (i + 1) * GOLDEN)`` where
    ``s0`` is derived from the seed and the stream tag; this matches the
    sequential SplitMix64 recurrence started at state ``s0``.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed_word = np.uint64(seed & _U64_MASK)
        stream_word = np.uint64(stream & _U64_MASK)
        with np.errstate(over="ignore"):
            base = _mix64((seed_word + _GOLDEN).reshape(()))
            tag = _mix64((stream_word + _GOLDEN + _GOLDEN).reshape(()))
            self._state0 = np.uint64(_mix64(np.asarray(base ^ tag)))
        self._counter = 0

    def raw(self, count: int) -> NDArray[np.uint64]:
        """Next ``count`` raw 64-bit words."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        idx = np.arange(self._counter + 1, self._counter + count + 1, dtype=np.uint64)
        self._counter += count
        with np.errstate(over="ignore"):
            return _mix64(self._state0 + idx * _GOLDEN)

    def uniform(self, count: int) -> NDArray[np.float64]:
        """Doubles in [0, 1), 53-bit resolution."""
        return (self.raw(count) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, count: int) -> NDArray[np.float64]:
        """Standard normal variates via Box-Muller on uniform pairs."""
        pairs = (count + 1) // 2
        words = self.raw(2 * pairs)
        # u1 in (0, 1] keeps the log finite; u2 in [0, 1).
        u1 = ((words[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (words[pairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return out[:count]

    def integers(self, count: int, bound: int) -> NDArray[np.int64]:
        """Integers uniform on [0, bound) by rejection below a multiple of bound."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if bound == 1:
            self.raw(count)  # keep stream position independent of bound
            return np.zeros(count, dtype=np.int64)
        if bound & (bound - 1) == 0:
            mask = np.uint64(bound - 1)
            return (self.raw(count) & mask).astype(np.int64)
        threshold = np.uint64((_U64_MASK + 1) // bound * bound - 1)
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            words = self.raw(count - filled)
            accepted = words[words <= threshold]
            taken = accepted[: count - filled]
            out[filled : filled + taken.size] = (taken % np.uint64(bound)).astype(np.int64)
            filled += taken.size
        return out


class IndexSampler:
    """Buffered uniform sampling of component indices, one at a time."""

    _BLOCK = 256

    def __init__(self, stream: RandomStream, bound: int):
        if bound < 1:
            raise ValueError("bound must be at least 1")
        self._stream = stream
        self._bound = bound
        self._buffer: NDArray[np.int64] = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next_index(self) -> int:
        if self._pos >= self._buffer.size:
            self._buffer = self._stream.integers(self._BLOCK, self._bound)
            self._pos = 0
        value = int(self._buffer[self._pos])
        self._pos += 1
        return value
