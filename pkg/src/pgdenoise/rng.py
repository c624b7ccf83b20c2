"""Deterministic, splittable random streams built on SplitMix64.

SplitMix64 is counter based: the n-th output of a stream with key ``k`` is
``mix64(k + n * GAMMA)``.  That makes any draw addressable without stepping
through the ones before it, which is what the per-pixel sampling kernels rely
on (pixel ``i`` owns the substream keyed by the ``i``-th output of the parent
key), so results never depend on how pixels are partitioned.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_value(key: int, n: int) -> int:
    """The ``n``-th output (n >= 1) of the SplitMix64 stream keyed by ``key``."""
    return mix64((key + n * GAMMA) & MASK64)


def name_hash(name: str) -> int:
    """64-bit FNV-1a of a UTF-8 string; stable across processes and platforms."""
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


class RngState:
    """A single-owner random stream.

    Sequential draws advance an internal counter.  ``split`` derives an
    independent child stream from a purpose label, so separate concerns
    (cropping, noise, weight init) never share draws.
    """

    def __init__(self, seed: int = 0, *, _key: int | None = None):
        self.seed = int(seed)
        self.key = mix64(self.seed & MASK64) if _key is None else _key & MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, key=0x{self.key:016x}, counter={self.counter})"

    def split(self, name: str) -> "RngState":
        """Child stream for ``name``; does not advance this stream."""
        return RngState(self.seed, _key=mix64(self.key ^ name_hash(name)))

    def next_key(self) -> int:
        """Draw one 64-bit value, used to key a pixel-addressed kernel call."""
        self.counter += 1
        return stream_value(self.key, self.counter)

    def u64(self, size: int) -> np.ndarray:
        n = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        return mix64_array(np.uint64(self.key) + n * np.uint64(GAMMA))

    def uniform(self, size: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits of each draw."""
        return (self.u64(size) >> np.uint64(11)).astype(np.float64) * INV_2_53

    def integers(self, high: int, size: int | None = None):
        """Integers in [0, high) by scaling a uniform (bias < 2**-53 * high)."""
        n = 1 if size is None else size
        out = np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)
        return int(out[0]) if size is None else out

    def normal(self, size: int) -> np.ndarray:
        """Standard normals via Box-Muller, two uniforms per value."""
        u = self.uniform(2 * size)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
