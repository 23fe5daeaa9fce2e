"""Reproducible Brownian increments.

Each path owns a counter-based Philox stream keyed by base_seed + path
index; the j-th draw of the stream is the increment of step j. Increments
are therefore a pure function of (base_seed, path, step), independent of
chunking or parallel generation order.
"""

from __future__ import annotations

import numpy as np

_KEY_SPACE = 1 << 128


def brownian_increments(base_seed: int, path_index: int, steps: int, dt: float) -> np.ndarray:
    key = (int(base_seed) + int(path_index)) % _KEY_SPACE
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(steps) * np.sqrt(dt)


def increment_block(base_seed: int, first_path: int, n_paths: int, steps: int,
                    dt: float) -> np.ndarray:
    """Increments for paths first_path..first_path+n_paths-1, shape (n_paths, steps)."""
    out = np.empty((n_paths, steps))
    for r in range(n_paths):
        out[r] = brownian_increments(base_seed, first_path + r, steps, dt)
    return out
