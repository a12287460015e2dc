"""Deterministic seed derivation.

All randomness in domlab flows from a single 64-bit master seed.  Component
streams are derived with a splitmix64 counter scheme: the stream for a
component is ``splitmix64(master ^ fnv1a64(label))`` advanced once per label,
so adding a new consumer never perturbs the draws of existing ones.  The
derived 64-bit value seeds a ``numpy.random.Generator`` (PCG64).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def fnv1a64(label: str) -> int:
    """FNV-1a hash of a label string, 64 bit."""
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given state."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *labels: str) -> int:
    """Derive a component seed from the master seed and a label path."""
    s = master_seed & _MASK64
    for label in labels:
        s = splitmix64(s ^ fnv1a64(label))
    return s


def generator(master_seed: int, *labels: str) -> np.random.Generator:
    """A numpy Generator seeded deterministically for the given component."""
    return np.random.default_rng(derive_seed(master_seed, *labels))
