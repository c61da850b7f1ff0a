"""Counter-based normal variates shared by both simulation backends.

Every path ``i`` owns a 64-bit key derived from the run seed; the ``c``-th
normal pair of that path depends only on ``(key, c)``.  Bits come from the
SplitMix64 finaliser applied to ``key + (n + 1) * GOLDEN``; normals are
produced by the Box-Muller transform from two 53-bit uniforms, with the
first uniform taken in ``(0, 1]`` so the logarithm is finite.

Counter 0 is reserved for the initial law, step ``n`` (0-based) uses
counter ``n + 1``.  The compiled kernel implements the same recipe.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53
MASK64 = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_keys(seed: int, path_ids: np.ndarray) -> np.ndarray:
    """Per-path stream keys ``mix(mix(seed) + (i + 1) * GOLDEN)``."""
    base = mix64(np.array([seed & MASK64], dtype=np.uint64))[0]
    ids = np.asarray(path_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(base + (ids + np.uint64(1)) * GOLDEN)


def _bits(keys: np.ndarray, n: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return mix64(keys + np.uint64(n + 1) * GOLDEN)


def normal_pair(keys: np.ndarray, counter: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independent standard normal arrays for ``counter`` of each stream."""
    x1 = _bits(keys, 2 * counter)
    x2 = _bits(keys, 2 * counter + 1)
    u1 = ((x1 >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
    u2 = (x2 >> np.uint64(11)).astype(np.float64) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)
