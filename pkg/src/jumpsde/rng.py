"""Counter-based random streams for reproducible per-path simulation.

Every path of an ensemble draws from its own family of statistically
independent streams, keyed by ``(master_seed, path_index, substream)``.
The key goes into a Philox counter-based bit generator, so a single path
can be replayed bit-exactly without generating any of its neighbours, and
the ensemble is a pure function of the configuration no matter how the
work is chunked internally.

Substream ids:

==============  ===========================================================
BROWNIAN        one base normal d-vector per grid step
JUMP_TIMES      Poisson counts and event times of the uncompensated
                (large, interlaced) jump stream
JUMP_MARKS      marks of the large jump stream
SUBDIV          extra normals for sub-intervals created by large jumps
                inside a grid step
BROWNIAN_2      second Brownian driver (reflection coupling)
SMALL_TIMES     counts/times of the compensated truncated-small stream
SMALL_MARKS     marks of the compensated truncated-small stream
==============  ===========================================================
"""

from __future__ import annotations

import numpy as np

BROWNIAN = 0
JUMP_TIMES = 1
JUMP_MARKS = 2
SUBDIV = 3
BROWNIAN_2 = 4
SMALL_TIMES = 5
SMALL_MARKS = 6

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def stream_key(master_seed: int, path_index: int, substream: int) -> np.ndarray:
    """128-bit Philox key for one (seed, path, substream) triple."""
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    if not 0 <= substream < 256:
        raise ValueError("substream id out of range")
    hi = np.uint64(master_seed) & _MASK64
    lo = (np.uint64(path_index) << np.uint64(8)) | np.uint64(substream)
    return np.array([hi, lo], dtype=np.uint64)


def stream(master_seed: int, path_index: int, substream: int) -> np.random.Generator:
    """Independent Generator for one (seed, path, substream) triple."""
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, path_index, substream)))
