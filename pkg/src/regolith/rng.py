"""Self-contained deterministic PRNG for reproducible dataset splits.

Dataset splits must come out bit-identical across platforms, Python
versions and reimplementations, so the generator is pinned to exact
published constants rather than delegating to ``random`` (Mersenne
Twister) or numpy (PCG64), whose streams are library details.

The generator is xoshiro256** (Blackman & Vigna), seeded by expanding a
64-bit seed through splitmix64. All arithmetic is modulo 2**64.

    splitmix64(s):
        s += 0x9E3779B97F4A7C15
        z = s
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    xoshiro256**(s0..s3):
        result = rotl(s1 * 5, 7) * 9
        t = s1 << 17
        s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
        s3 = rotl(s3, 45)

Bounded draws use plain modulo (documented; the bias is negligible for
the list sizes involved) and shuffling is Fisher-Yates from the end.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seed expansion."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, value = _splitmix64(state)
            s.append(value)
        if not any(s):
            s[0] = 1  # the all-zero state is a fixed point
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def randbelow(self, n: int) -> int:
        """Uniform-ish draw in [0, n) via modulo reduction."""
        if n <= 0:
            raise ValueError(f"randbelow needs n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, iterating from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
