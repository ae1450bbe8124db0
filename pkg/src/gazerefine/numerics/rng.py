"""Counter-based SplitMix64 random streams.

The stream for seed ``s`` is ``out[i] = mix64(s + (i + 1) * GAMMA)`` with the
standard SplitMix64 finaliser.  Derived streams hash their key path with
64-bit FNV-1a and mix it into the parent seed, so any implementation that
follows these three rules reproduces the same numbers:

* uniform doubles are ``(out >> 11) * 2**-53``;
* normals use Box-Muller with two consecutive uniforms ``u1, u2`` as
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``;
* permutations sort ``arange(n)`` by one uniform key each (stable sort).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


class Rng:
    """Deterministic random stream with 64-bit seed and a draw counter."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"

    def derive(self, *keys) -> "Rng":
        """Independent child stream; does not advance this stream."""
        path = "/".join(str(k) for k in keys).encode("utf-8")
        return Rng(_mix64_int(self.seed ^ fnv1a64(path)))

    def _u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix64(z)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self._u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, mean=0.0, std=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        out = mean + std * z
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)`` via ``floor(u * (high - low))``."""
        u = self.random(size)
        out = low + np.floor(u * (high - low)).astype(np.int64)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        keys = self.random(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        if replace:
            return self.integers(0, n, size)
        if size > n:
            raise ValueError(f"cannot draw {size} distinct items from {n}")
        return self.permutation(n)[:size]
