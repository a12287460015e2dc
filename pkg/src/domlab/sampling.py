"""Deterministic point sets standing in for Lebesgue measure at finite resolution.

The default is a uniform grid whose origin is shifted inside each cell by a
fixed irrational offset, so no sample ever lands on a rational lattice point
(fixed points, saddle connections, partition boundaries).  A seeded Kronecker
sequence is available as a low-discrepancy alternative.
"""

from __future__ import annotations

import numpy as np

from .rng import derive_seed

# frac(sqrt(p)) for primes p: per-axis sub-cell offsets of the grid origin.
_IRRATIONAL = np.array([np.sqrt(2.0) % 1.0, np.sqrt(3.0) % 1.0, np.sqrt(5.0) % 1.0])

# Generalized golden ratios for the Kronecker lattice (Richtmyer directions).
_ALPHA = np.array([np.sqrt(2.0), np.sqrt(3.0), np.sqrt(5.0)]) % 1.0


def lebesgue_grid(cells_per_axis: int, dimension: int) -> np.ndarray:
    """Deterministic grid of cells_per_axis^dimension points in [0,1)^d.

    Each point sits at an irrational offset inside its cell, never on the
    rational lattice.
    """
    k = int(cells_per_axis)
    axes = [(np.arange(k) + _IRRATIONAL[a]) / k for a in range(dimension)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def kronecker_sequence(n_points: int, dimension: int, seed: int = 0) -> np.ndarray:
    """Seeded Kronecker (additive irrational rotation) low-discrepancy set."""
    start = (derive_seed(seed, "kronecker") % (2 ** 53)) / float(2 ** 53)
    j = np.arange(1, n_points + 1)[:, None]
    return np.mod(start + j * _ALPHA[None, :dimension], 1.0)
