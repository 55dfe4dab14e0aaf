"""Deterministic PRNG: splitmix64-seeded xoshiro256**.

The generator is pinned to this exact algorithm so that datasets and
schedules written by one implementation can be reproduced bit-for-bit by
another. All state is explicit; nothing reads global randomness.

Derived draws are defined on top of the raw 64-bit stream:
  * float64 in [0,1): top 53 bits, ``(x >> 11) * 2**-53``
  * standard normals: Box-Muller on consecutive uniform pairs, cosine
    branch first, sine branch second; an odd request discards the final
    sine value (the stream still advances by the full pair)
  * randint(n): ``floor(u * n)`` from one float64 draw
  * shuffle: Fisher-Yates from the back, one randint per position
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int):
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def mix64(value: int) -> int:
    """One splitmix64 output for ``value``; used to derive sub-stream seeds."""
    return splitmix64(value & _MASK64)[1]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 state expansion from a single seed."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
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

    def u64_block(self, n: int) -> np.ndarray:
        """n raw outputs as uint64. Plain loop; the state chain is sequential."""
        out = np.empty(n, dtype=np.uint64)
        s0, s1, s2, s3 = self._s
        for i in range(n):
            out[i] = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_block(self, n: int) -> np.ndarray:
        block = self.u64_block(n)
        return (block >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal_block(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform_block(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 keeps log away from 0
        theta = (2.0 * math.pi) * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def normal(self) -> float:
        return float(self.normal_block(1)[0])

    def randint(self, n: int) -> int:
        """Integer in [0, n) via one float64 draw."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return int(self.random() * n)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list:
        items = list(range(n))
        self.shuffle(items)
        return items

    def get_state(self):
        return tuple(self._s)

    def set_state(self, state) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state has 4 words")
        self._s = [int(w) & _MASK64 for w in state]
