"""Platform-independent 64-bit seed derivation.

Sweep cells and kernel rows get their random streams from
``derive_seed(master, *indices)``: each index is finalized with the splitmix64
mixer and folded into the running state, all in modular 64-bit arithmetic, so
derived seeds are identical across platforms and independent of execution
order. Streams are numpy PCG64 generators.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "make_rng", "splitmix64"]

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    """One splitmix64 step: advance by the golden gamma and finalize."""
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Mix a master seed with any number of nonnegative indices."""
    state = splitmix64(master & _MASK)
    for index in indices:
        state = splitmix64(state ^ splitmix64(index & _MASK))
    return state


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
