"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by the
run seed plus a tuple of integer stream tags, so any stream can be rebuilt
from ``(seed, tags)`` alone without carrying generator state around.
"""

import numpy as np

# stream tags
INIT = 1
SCENE = 2
SCHEDULE = 3
SAMPLING = 4


def stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, tags)])))


def derive_seed(seed: int, *tags: int) -> int:
    """A 63-bit child seed, stable across platforms."""
    state = np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
