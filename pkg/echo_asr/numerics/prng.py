"""
Deterministic seeded randomness: xoshiro256** seeded via splitmix64.

Один и тот же seed => один и тот же поток на любой платформе, поэтому
reservoir можно хранить как seed вместо весов.

Потоки делятся через split(label): seed ребёнка = splitmix64(seed ^ label),
и зависит только от seed родителя, а не от того, сколько родитель уже выдал.
"""

from __future__ import annotations

import math
from typing import List, Union

import numpy as np

from echo_asr.errors import InvalidRangeError

MASK64 = 0xFFFF_FFFF_FFFF_FFFF

_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

Label = Union[int, str]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (next_state, output)."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def label_to_u64(label: Label) -> int:
    if isinstance(label, int):
        return label & MASK64
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def derive_seed(parent_seed: int, label: Label) -> int:
    _, out = splitmix64((parent_seed ^ label_to_u64(label)) & MASK64)
    return out


class Prng:
    """
    xoshiro256** 1.0. Single-owner: не шарить между потоками.
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        sm = self.seed
        s: List[int] = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        if not any(s):
            s[0] = 1
        self._s = s

    # ---------------------------
    # Streams
    # ---------------------------
    def split(self, label: Label) -> "Prng":
        return Prng(derive_seed(self.seed, label))

    # ---------------------------
    # Core generator
    # ---------------------------
    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise InvalidRangeError("uniform requires lo < hi", lo=lo, hi=hi)
        v = lo + (hi - lo) * self.random()
        # округление lo + span*u может дать ровно hi
        if v >= hi:
            v = math.nextafter(hi, lo)
        return v

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) (Lemire multiply-shift with rejection)."""
        if n <= 0:
            raise InvalidRangeError("below requires n > 0", n=n)
        threshold = (2**64 - n) % n
        while True:
            m = self.next_u64() * n
            if (m & MASK64) >= threshold:
                return m >> 64

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        if lo > hi:
            raise InvalidRangeError("randint requires lo <= hi", lo=lo, hi=hi)
        return lo + self.below(hi - lo + 1)

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller, одна из пары; u1 в (0, 1]
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    # ---------------------------
    # Bulk helpers
    # ---------------------------
    def uniform_array(self, n: int, lo: float, hi: float) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64)

    def gauss_array(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.gauss(mu, sigma) for _ in range(n)], dtype=np.float64)

    def sample_without_replacement(self, n: int, k: int) -> List[int]:
        """k distinct integers from [0, n), partial Fisher-Yates over a lazy swap map."""
        if not 0 <= k <= n:
            raise InvalidRangeError("sample size must be within population", n=n, k=k)
        swaps: dict[int, int] = {}
        out: List[int] = []
        for i in range(k):
            j = i + self.below(n - i)
            vi = swaps.get(i, i)
            vj = swaps.get(j, j)
            swaps[j] = vi
            out.append(vj)
        return out

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def prng_uniform(p: Prng, lo: float, hi: float) -> float:
    return p.uniform(lo, hi)
