"""Seed handling: every random quantity is addressed by a 64-bit stream key.

Keys are derived from a master seed and integer tags with the splitmix64
finalizer, so any realization can be regenerated independently of the
order in which realizations are computed.
"""

import numpy as np

from gmclab._rngconst import GOLDEN
from gmclab._kernels_np import _mix

# stream tags
NOISE = 1
ETA = 2
PATHS = 3
RESAMPLE = 4
FLOW = 5
PAIRS = 6

_MASK = (1 << 64) - 1


def stream_key(seed: int, *tags: int) -> int:
    """Derive a 64-bit key from ``seed`` and integer ``tags``."""
    h = _mix(np.uint64(int(seed) & _MASK) ^ GOLDEN)
    for t in tags:
        with np.errstate(over="ignore"):
            h = _mix(h ^ (np.uint64(int(t) & _MASK) * GOLDEN + np.uint64(0x632BE59BD9B4E019)))
    return int(h)


def uniforms(key: int, n: int) -> np.ndarray:
    """``n`` uniforms in (0, 1) from ``key`` (used for resampling and pair draws)."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) + (np.arange(n, dtype=np.uint64) + np.uint64(1)) * GOLDEN)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0
