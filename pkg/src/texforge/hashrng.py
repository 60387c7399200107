"""Counter-based uniform random numbers.

Renderers need one independent stream per pixel that does not depend on the
order pixels are processed in. Keeping a Generator per pixel is too slow, so
samples are produced by hashing (seed, stream, index) with splitmix64.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, stream, counter) -> np.ndarray:
    """Uniform floats in [0, 1) keyed by broadcastable ``stream`` and ``counter``."""
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        s = np.asarray(stream, dtype=np.uint64)
        c = np.asarray(counter, dtype=np.uint64)
        z = _mix(key ^ (s * _GOLDEN))
        z = _mix(z + c * _GOLDEN + _GOLDEN)
    # top 53 bits -> double in [0, 1)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
