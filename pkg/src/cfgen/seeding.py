"""Deterministic seed derivation for parallel / per-sample reproducibility.

Python's builtin ``hash`` is salted per process, so sweep seeds are derived
with a splitmix64-style mixer instead. ``derive_seed(seed, i)`` is a pure
function of its arguments and stable across runs and platforms.
"""

from __future__ import annotations

import random

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Mix a base seed with a sample index into an independent 64-bit seed."""
    return _splitmix64(_splitmix64(seed & _MASK64) ^ (index & _MASK64))


def make_rng(seed: int) -> random.Random:
    """Seeded generator; all sampling in this package goes through one of these."""
    return random.Random(seed & _MASK64)
