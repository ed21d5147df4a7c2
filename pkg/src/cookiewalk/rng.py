"""Counter-based keyed randomness.

Every random quantity in this package is a pure function of a 64-bit key
plus integer coordinates (site index, visit index, generation, summand
index, ...).  Keys are derived by folding coordinate words through a
splitmix64-style avalanche, so the two-sided infinite environment and all
simulation streams need no state and no storage: revisiting a coordinate
reproduces the same draw, and disjoint coordinates give statistically
independent draws.

The same mixing function is re-implemented with ``np.uint64`` arithmetic
inside the numba kernels (see ``_kernels.py``); ``tests/test_rng.py`` pins
the two implementations to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

# (k >> 11) keeps 53 bits; +0.5 centers in the cell so 0 and 1 are excluded.
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer: avalanche a 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def fold64(h: int, w: int) -> int:
    """Absorb one coordinate word into a running key."""
    return mix64((h + GOLDEN + (w & MASK64)) & MASK64)


def derive_key(base: int, *words: int) -> int:
    h = base & MASK64
    for w in words:
        h = fold64(h, w)
    return h


def unit_uniform(key: int) -> float:
    """Map a key to a uniform in the open interval (0, 1)."""
    return ((key >> 11) + 0.5) * _INV53


def uniform_at(base: int, *words: int) -> float:
    return unit_uniform(derive_key(base, *words))


def fold64_array(h: int, words: np.ndarray) -> np.ndarray:
    """Vectorized ``fold64`` of one scalar key with an array of words."""
    z = words.astype(np.uint64) + np.uint64((h + GOLDEN) & MASK64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def uniform_array(base: int, words: np.ndarray) -> np.ndarray:
    """Uniforms in (0,1), one per word, under the key ``base``."""
    keys = fold64_array(base, np.asarray(words, dtype=np.int64))
    return ((keys >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def philox_generator(base: int, *words: int) -> np.random.Generator:
    """A numpy Generator keyed by (base, words): used for bulk non-keyed draws."""
    key = derive_key(base, *words)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class KeyedStream:
    """A handle on one random stream, identified entirely by its key.

    Streams are forked with :meth:`child`; draws at integer coordinates are
    reproducible and order-independent.
    """

    key: int

    def child(self, *words: int) -> "KeyedStream":
        return KeyedStream(derive_key(self.key, *words))

    def uniform(self, *words: int) -> float:
        return uniform_at(self.key, *words)

    def uniforms(self, words: np.ndarray) -> np.ndarray:
        return uniform_array(self.key, words)

    def generator(self, *words: int) -> np.random.Generator:
        return philox_generator(self.key, *words)


def stream_for(master_seed: int, *words: int) -> KeyedStream:
    return KeyedStream(derive_key(master_seed & MASK64, *words))
