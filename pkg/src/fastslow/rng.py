"""Counter-based stream splitting for reproducible parallel Monte Carlo.

Stream k is Philox keyed with root_seed XOR k: streams are statistically
independent by construction of the counter-based generator, and the mapping
is stateless, so any subset of trajectories can be regenerated bit-exactly
without touching the others.
"""
from __future__ import annotations

import numpy as np

_KEY_MASK = (1 << 128) - 1


def substream(root_seed: int, k: int) -> np.random.Generator:
    """Independent generator for trajectory k under the given root seed."""
    return np.random.Generator(np.random.Philox(key=(root_seed ^ k) & _KEY_MASK))


def stream_uniforms(root_seed: int, n: int) -> np.ndarray:
    """First uniform of each of the streams 0..n-1 (one draw per stream)."""
    return np.array([substream(root_seed, k).random() for k in range(n)])
