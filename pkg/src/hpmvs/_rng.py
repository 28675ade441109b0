"""Counter-based pseudo-random numbers.

Every draw is a pure function of (seed, stream, cell, draw-index), so any
per-pixel parallel schedule produces bitwise-identical results no matter
how work is split across threads. The mixer is splitmix64.
"""

import numpy as np
from numba import njit

__all__ = ["mix64", "mix64_array", "rand_u64", "rand_uniform", "uniform_from_key"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S1 = np.uint64(30)
_S2 = np.uint64(27)
_S3 = np.uint64(31)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def mix64(z):
    z = (z + _GAMMA)
    z = (z ^ (z >> _S1)) * _M1
    z = (z ^ (z >> _S2)) * _M2
    return z ^ (z >> _S3)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array (used by texture synthesis)."""
    z = z.astype(np.uint64) + _GAMMA
    z = (z ^ (z >> _S1)) * _M1
    z = (z ^ (z >> _S2)) * _M2
    return z ^ (z >> _S3)


@njit(cache=True, inline="always")
def rand_u64(seed, stream, cell, draw):
    h = mix64(np.uint64(seed))
    h = mix64(h ^ np.uint64(stream))
    h = mix64(h ^ np.uint64(cell))
    h = mix64(h ^ np.uint64(draw))
    return h


@njit(cache=True, inline="always")
def uniform_from_key(key):
    """Map a 64-bit key to a double in [0, 1)."""
    return np.float64(key >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def rand_uniform(seed, stream, cell, draw):
    return uniform_from_key(rand_u64(seed, stream, cell, draw))
