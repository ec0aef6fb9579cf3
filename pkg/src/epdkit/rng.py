"""Seed derivation helpers.

All stochastic behaviour in the toolkit flows through 64-bit seeds mixed with
splitmix64, so any (seed, index...) combination maps to a reproducible
numpy Generator on every platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One splitmix64 output step for the given 64-bit state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(base: int, *parts: int) -> int:
    """Mix ``base`` with any number of integer sub-indices into a fresh seed."""
    s = base & _MASK64
    for p in parts:
        s = splitmix64(s ^ splitmix64(p & _MASK64))
    return s


def frame_seed(spec_seed: int, frame_index: int) -> int:
    """Per-frame seed rule: spec seed XOR splitmix64(frame index)."""
    return (spec_seed ^ splitmix64(frame_index)) & _MASK64


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for a derived 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
