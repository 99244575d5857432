"""SplitMix64 pseudo-random generator.

All shuffles and weight initializations go through this generator so that a
given seed yields the same stream on every platform and numpy version.

The state starts at ``seed mod 2**64``. The k-th output (k = 1, 2, ...) is the
SplitMix64 finalizer applied to ``state + k * 0x9E3779B97F4A7C15``::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

with all arithmetic mod 2**64. Because each output depends only on its index,
blocks of outputs can be produced with vectorized uint64 arithmetic.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Deterministic 64-bit seed for a sub-stream (e.g. one training epoch)."""
    return _finalize((seed * GOLDEN_GAMMA + stream + 1) & _MASK)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self._state = int(seed) & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN_GAMMA) & _MASK
        return _finalize(self._state)

    def next_block(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array (same values as ``n`` calls to next_u64)."""
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + k * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * GOLDEN_GAMMA) & _MASK
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of each output."""
        return (self.next_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``.

        For i = n-1 down to 1, swap position i with j = next_u64() mod (i + 1).
        The modulo bias is below 2**-40 for any n under 2**24 and is accepted.
        """
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            order[i], order[j] = order[j], order[i]
        return np.asarray(order, dtype=np.int64)
