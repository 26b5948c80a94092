"""Seeded random streams.

Every random draw in the package goes through :func:`generator`, which derives an
independent counter-based (Philox) stream from a user seed and a fixed stream label.
Two calls with the same seed and label return bitwise-identical draws.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

# Fixed stream labels. Appending new labels is safe; renumbering is not.
STREAM_RANGE_SAMPLES = 1
STREAM_KERNEL_ROWS = 2
STREAM_NOISE = 3
STREAM_TRIALS = 4
STREAM_SPECTRUM = 5
STREAM_RHS = 6


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox generator for ``(seed, stream)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(sequence))


def gaussian_matrix(nrows: int, ncols: int, seed: int, stream: int = STREAM_RANGE_SAMPLES) -> NDArray[np.float64]:
    """Standard normal ``nrows x ncols`` matrix, drawn column by column."""
    rng = generator(seed, stream)
    out = np.empty((nrows, ncols), dtype=np.float64, order="F")
    for j in range(ncols):
        out[:, j] = rng.standard_normal(nrows)
    return out
