"""Portable seeded randomness: xoshiro256** with splitmix64 seeding.

Every reproducibility contract in this package (tile sampling, split
assignment, synthetic tile layouts) runs on this generator rather than
the interpreter's default RNG. The implementation is pure 64-bit integer
arithmetic, so a given seed yields the same stream on every platform and
Python build.

Reference algorithms: Vigna's splitmix64 and Blackman/Vigna xoshiro256**.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def mix(*values: int) -> int:
    """Fold integers into one 64-bit seed, order-sensitively.

    Used to derive independent child seeds, e.g. per-tile layout seeds
    from (world seed, z, x, y).
    """
    state = 0x9E3779B97F4A7C15
    for v in values:
        state, out = _splitmix64_next((state ^ (v & _MASK64)) & _MASK64)
        state = (state + out) & _MASK64
    _, out = _splitmix64_next(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** stream seeded from a 64-bit integer via splitmix64."""

    def __init__(self, seed: int) -> None:
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = _splitmix64_next(state)
            s.append(out)
        self._s = s

    def next64(self) -> int:
        """Next raw 64-bit output."""
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), bias-free via top rejection."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % bound)
        while True:
            v = self.next64()
            if v < limit:
                return v % bound

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next64() >> 11) * (2.0 ** -53)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_prefix(self, items: list, k: int) -> list:
        """First k entries of a partial Fisher-Yates shuffle of items.

        Mutates a copy, not the input. Draws without replacement and the
        output order is part of the determinism contract.
        """
        if not 0 <= k <= len(items):
            raise ValueError(f"k={k} out of range for {len(items)} items")
        pool = list(items)
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
