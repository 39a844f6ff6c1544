"""Seed-stream derivation.

One root seed fans out into independent substreams, one per purpose, so
that toggling an attack (or adding scenarios) never perturbs the random
numbers any other component sees. Streams are named by integer paths fed
to ``numpy.random.SeedSequence`` spawn keys, which is stable across numpy
versions and platforms.
"""

from __future__ import annotations

import numpy as np

# Purpose identifiers: the first element of every derived path.
INIT = 0
TASK = 1
STIMULUS = 2
ATTACK = 3
SCENARIO = 4
DATASET = 5
CALIBRATION = 6
SECURE = 7


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Return a PCG64 generator for the stream named by ``path``."""
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))


def stream_seed(root_seed: int, *path: int) -> int:
    """Return a 64-bit seed word for the stream named by ``path``.

    Used where a raw integer seed is needed (the in-kernel counter RNG)
    rather than a full Generator.
    """
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(2, dtype=np.uint32).view(np.uint64)[0])
