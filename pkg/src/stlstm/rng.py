"""Counter-based deterministic random streams.

Every stochastic site in the package (weight init, shuffling, frame
sampling, synthetic data, noise injection) draws from its own `Stream`,
keyed by `(seed, site, *indices)`. Streams are stateless apart from a
draw counter, so two runs with the same seed produce bit-identical
results regardless of the order in which unrelated sites consume
randomness, and workers can be given independent streams without any
shared state.

The generator is SplitMix64 used in counter mode: output ``k`` of the
stream with key ``K`` is ``mix64(K + (k+1) * GOLDEN)``. Constants are
the standard SplitMix64 ones (Steele, Lea & Flood 2014):

    GOLDEN = 0x9E3779B97F4A7C15
    MIX1   = 0xBF58476D1CE4E5B9
    MIX2   = 0x94D049BB133111EB

Stream keys are derived by folding the seed, the UTF-8 bytes of the site
name (FNV-1a 64), and the integer indices through mix64.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * MIX1
        z = (z ^ (z >> _U64(27))) * MIX2
        return z ^ (z >> _U64(31))


def _fnv1a(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def stream_key(seed: int, site: str, *indices: int) -> int:
    """Fold (seed, site, indices) into a 64-bit stream key."""
    with np.errstate(over="ignore"):
        k = _mix64(np.asarray([seed & _MASK64], dtype=np.uint64))
        k = _mix64(k ^ _U64(_fnv1a(site.encode("utf-8"))))
        for ix in indices:
            k = _mix64((k + GOLDEN) ^ _U64(ix & _MASK64))
    return int(k[0])


class Stream:
    """One independent random stream; draws advance only its own counter."""

    def __init__(self, key: int):
        self.key = _U64(key & _MASK64)
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 outputs."""
        ctr = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.key + ctr * GOLDEN)

    def uniform(self, n: int | None = None) -> np.ndarray | float:
        """float64 in [0, 1), using the top 53 bits."""
        out = (self.raw(n if n is not None else 1) >> _U64(11)) * 2.0**-53
        return out if n is not None else float(out[0])

    def uniform_range(self, lo: float, hi: float, n: int | None = None):
        return lo + (hi - lo) * self.uniform(n)

    def normal(self, n: int | None = None) -> np.ndarray | float:
        """Standard normals via Box-Muller (two uniforms per draw)."""
        m = n if n is not None else 1
        u1 = (self.raw(m) >> _U64(11)) + _U64(1)  # (0, 1], keeps log finite
        u1 = u1 * 2.0**-53
        u2 = (self.raw(m) >> _U64(11)) * 2.0**-53
        out = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out if n is not None else float(out[0])

    def integers(self, high: int, n: int | None = None) -> np.ndarray | int:
        """Integers uniform on [0, high)."""
        if high <= 0:
            raise ValueError(f"integers() needs high > 0, got {high}")
        out = np.floor(self.uniform(n if n is not None else 1) * high).astype(np.int64)
        out = np.minimum(out, high - 1)
        return out if n is not None else int(out[0])

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n) by sorting one uniform key per slot."""
        return np.argsort(self.raw(n), kind="stable")

    def unit_vector(self, dim: int) -> np.ndarray:
        """Uniformly random direction (normalized Gaussian draw)."""
        while True:
            v = self.normal(dim)
            norm = float(np.linalg.norm(v))
            if norm > 1e-12:
                return v / norm


def stream(seed: int, site: str, *indices: int) -> Stream:
    """Stream keyed by (seed, site, *indices); the package-wide entry point."""
    return Stream(stream_key(seed, site, *indices))
