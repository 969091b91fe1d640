"""Deterministic 64-bit-state random generator used for sample selection.

The splitmix64 recurrence is tiny, has a fully specified update rule, and
keeps support-set sampling reproducible from nothing but the seed, no
matter which platform or library version replays it.  Heavier numerics
(cluster noise, weight init, epoch shuffles) use ``numpy.random.Generator``
instead; only selection-style sampling goes through this module.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """splitmix64 stream over a 64-bit state."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free by rejection."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(base: int, *parts: int) -> int:
    """Fold integer tags into a base seed, one mix step per tag.

    Used to give every (grid point, repeat) unit of a sweep its own
    reproducible child seed.
    """
    state = base & _MASK
    for p in parts:
        state = (state + _GAMMA + (p & _MASK)) & _MASK
        state = _mix(state)
    return state
