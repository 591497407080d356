"""Self-contained 64-bit PRNG used for every stochastic choice in the package.

A splitmix-style generator keeps all draws bit-reproducible across platforms
and lets seeds be derived hierarchically (run seed -> epoch seed -> sample
seed) without storing any state between runs.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(*parts: int | str) -> int:
    """Fold integers and strings into one 64-bit seed, order-sensitively."""
    state = 0x8867A5C0F3D1E24B
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode("utf-8"):
                state = _mix((state + byte + _GAMMA) & _MASK)
            state = _mix((state + len(part) + _GAMMA) & _MASK)
        else:
            state = _mix((state + (int(part) & _MASK) + _GAMMA) & _MASK)
    return state


class Rng:
    """Splitmix64 stream with the handful of draw kinds the package needs."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64)

    def log_uniform(self, lo: float, hi: float) -> float:
        return float(np.exp(self.uniform(np.log(lo), np.log(hi))))

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller; the second value of each pair is cached.
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
        else:
            u1 = 1.0 - self.uniform()  # in (0, 1], keeps log finite
            u2 = self.uniform()
            r = np.sqrt(-2.0 * np.log(u1))
            z = r * np.cos(2.0 * np.pi * u2)
            self._spare_normal = float(r * np.sin(2.0 * np.pi * u2))
        return mu + sigma * float(z)

    def normals(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mu, sigma) for _ in range(n)], dtype=np.float64)

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def choose_indices(self, n_total: int, k: int) -> list[int]:
        """k distinct indices from range(n_total), via partial Fisher-Yates."""
        if k > n_total:
            raise ValueError("cannot draw more distinct indices than available")
        pool = list(range(n_total))
        for i in range(k):
            j = i + self.randint(n_total - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
