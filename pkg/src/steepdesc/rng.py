"""Pinned pseudo-random stream: splitmix64-seeded xoshiro256++ with Box-Muller.

Dataset generation and parameter initialization must be reproducible
bit-for-bit across platforms and library versions, so the generator is
pinned to a fixed algorithm instead of delegating to numpy's default.

Call-order contract (relied on by dataset fixtures):
  * ``uniform()`` consumes exactly one 64-bit output.
  * Gaussians are produced in Box-Muller pairs, two uniforms per pair,
    ``u1`` drawn before ``u2``; ``gaussians(n)`` consumes ``ceil(n/2)``
    pairs and discards the unused second value when ``n`` is odd.
"""
from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64_stream(seed: int, n: int) -> list[int]:
    """First ``n`` outputs of the splitmix64 sequence started at ``seed``."""
    out = []
    state = seed & _MASK64
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256pp:
    """xoshiro256++ generator, state seeded through splitmix64.

    All-zero states are impossible by construction (splitmix64 outputs of
    any seed are never jointly zero for 4 consecutive draws in practice;
    a zero state is rejected defensively anyway).
    """

    def __init__(self, seed: int):
        state = splitmix64_stream(seed, 4)
        if not any(state):
            state = splitmix64_stream(seed ^ 0xDEADBEEF, 4)
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) using the top 53 bits of one output."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n) via the 53-bit uniform (n << 2^53)."""
        if n <= 0:
            raise ValueError("randint_below requires n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def gaussian_pair(self) -> tuple[float, float]:
        """One Box-Muller pair; u1 is mapped into (0, 1] so log(u1) is finite."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def gaussians(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(0, n - 1, 2):
            out[i], out[i + 1] = self.gaussian_pair()
        if n % 2 == 1:
            out[n - 1] = self.gaussian_pair()[0]
        return out

    def choice_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), partial Fisher-Yates order."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from range({n})")
        pool = list(range(n))
        picked = []
        for i in range(k):
            j = i + self.randint_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            picked.append(pool[i])
        return picked


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """Independent sub-seeds from one master seed (splitmix64 stream)."""
    return splitmix64_stream(master_seed, n)
