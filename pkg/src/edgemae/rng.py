"""splitmix64 stream shared by data generation, masking and shuffling."""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Rng:
    """Deterministic 64-bit splitmix generator.

    The draw order is part of the data contract: datasets and masks are
    reproducible bit-for-bit across platforms given the same seed.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Integer uniform over the closed range [lo, hi]."""
        span = hi - lo + 1
        return lo + min(int(self.uniform() * span), span - 1)

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        for i in range(n - 1):
            j = i + int(self.uniform() * (n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
