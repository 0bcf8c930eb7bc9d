"""Small, portable, seedable random number generator.

All stochastic operations in this package (map generation, obstacle
perturbation, trajectory simulation, randomized probes) draw from
SplitMix64 so that runs are reproducible bit-for-bit from a single
integer seed, independent of platform, thread count, or Python version.
A reference output sequence lives in docs/rng_reference.md and is
checked by the test suite; a port to another language can be validated
against the same file.

SplitMix64 (Steele, Lea, Flood 2014): 64-bit state advances by a fixed
odd constant, output is a mixed copy of the state.  Not cryptographic.
"""

from __future__ import annotations

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit generator with convenience draws."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        # rejection zone keeps the draw exactly uniform
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for substream `index` of a master seed.

    Defined as mix64(master + (index + 1) * GOLDEN); documented so that
    per-run streams (Monte Carlo episode i of master seed m) can be
    reproduced in any language without running earlier episodes.
    """
    return _mix64((master_seed + (index + 1) * _GOLDEN) & _MASK64)


def substream(master_seed: int, index: int) -> SplitMix64:
    return SplitMix64(derive_seed(master_seed, index))
