"""Counter-based random streams.

Every stream is keyed by ``(seed, *keys)`` and backed by Philox, so draws for a
given point index never depend on the order in which points are processed.
"""

import numpy as np

# stream tags, used as the first key so unrelated consumers never collide
SAMPLE = 1
OUTER = 2
SHUFFLE_F = 3
SHUFFLE_G = 4
INIT = 5
CORRUPT = 6
SPLIT = 7
ATTACK = 8
SYNTH = 9
AE = 10


def rng(seed, *keys):
    """Return an independent generator for the stream ``(seed, *keys)``."""
    if seed is None:
        seed = 0
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
