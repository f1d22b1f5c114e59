"""Counter-based splitmix64 generator keyed by integer tuples.

Used wherever the pipeline needs reproducible pseudorandom vectors without
weight files: transformer embeddings/projections and the default token embedder.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1


def mix(z):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def derive_keys(*parts) -> np.ndarray:
    """Fold integers (or equal-length integer arrays) into 64-bit keys; order-sensitive."""
    state = np.zeros(1, dtype=np.uint64)
    for part in parts:
        if np.ndim(part) == 0:
            part = np.uint64(int(part) & MASK64)
        else:
            part = np.array([int(p) & MASK64 for p in part], dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = mix(state ^ part) + GOLDEN
    return state


def derive_key(*parts: int) -> int:
    return int(derive_keys(*parts)[0])


def uniform(keys, dim: int) -> np.ndarray:
    """Map each 64-bit key to ``dim`` reals uniform in [-1, 1).

    Returns shape ``(len(keys), dim)`` float64.
    """
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1, 1)
    steps = np.arange(1, dim + 1, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        z = mix(keys + steps * GOLDEN)
    unit = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return unit * 2.0 - 1.0
