"""Portable, counter-based random numbers for the synthetic degradations.

The stream for a frame pair is Philox4x64-10 (Random123) keyed by the two
words ``k0 = (i << 32) | j`` and ``k1 = seed``. Block ``b = 1, 2, 3, ...``
encrypts the counter ``(b, 0, 0, 0)`` and its four output words are read in
order, so the stream is the concatenation of blocks 1, 2, 3, ... A word
``w`` maps to a uniform double ``(w >> 11) * 2**-53`` in ``[0, 1)``.
Normals come from the Box-Muller transform applied to two blocks of
uniforms, ``u1`` then ``u2``::

    r  = sqrt(-2 * log(1 - u1))
    z0 = r * cos(2 * pi * u2)
    z1 = r * sin(2 * pi * u2)

Because the key depends only on ``(seed, i, j)``, the draws for a pair do not
depend on which other pairs were generated or in what order.

Values tied to scene content rather than to a frame pair use SplitMix64 as a
hash: ``hash_uniform(seed, a, b, c)`` folds each integer into the state with
``state = splitmix64(state ^ value)`` starting from ``splitmix64(seed)`` and
maps the final word to ``[0, 1)`` as above. Negative integers enter as their
64-bit two's complement.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK32 = (1 << 32) - 1


def pair_key(seed: int, i: int, j: int) -> int:
    return ((seed & _MASK64) << 64) | ((i & _MASK32) << 32) | (j & _MASK32)


class PairStream:
    """Sequential uniforms/normals for one ``(seed, i, j)`` key."""

    def __init__(self, seed: int, i: int, j: int):
        self._bitgen = np.random.Philox(key=pair_key(seed, i, j))

    def uniform(self, n: int) -> np.ndarray:
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal_pair(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        z0, z1, _ = box_muller(self.uniform(n), self.uniform(n))
        return z0, z1


def box_muller(u1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two independent standard normals from two uniform blocks.

    Also returns ``1 - u1``, which equals ``exp(-(z0**2 + z1**2) / 2)`` and is
    itself uniform: small values mark large noise vectors.
    """
    tail = 1.0 - u1
    r = np.sqrt(-2.0 * np.log(tail))
    angle = 2.0 * np.pi * u2
    return r * np.cos(angle), r * np.sin(angle), tail


def splitmix64(x) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, *values) -> np.ndarray:
    """Uniform ``[0, 1)`` doubles hashed from a seed and broadcastable integer arrays."""
    state = splitmix64(np.array([seed & _MASK64], dtype=np.uint64))
    for v in values:
        word = np.asarray(v, dtype=np.int64).astype(np.uint64)
        state = splitmix64(state ^ word)
    return (state >> np.uint64(11)).astype(np.float64) * 2.0**-53
