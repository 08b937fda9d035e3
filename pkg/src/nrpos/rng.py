"""Deterministic RNG substreams.

Every random draw in a simulation run comes from a substream keyed by
(master_seed, path...), so results are identical no matter how drops are
scheduled across workers.
"""

from __future__ import annotations

import numpy as np

# Fixed labels hashed into substream keys. Strings are not hashable in a
# platform-stable way, so label -> small int.
_PURPOSES = {
    "deploy": 0,
    "drop": 1,
    "link": 2,
    "noise": 3,
    "sync": 4,
    "aoa": 5,
    "rsrp": 6,
}


def substream(master_seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by `path` under `master_seed`.

    Path elements are ints or one of the purpose labels. The same
    (seed, path) always yields the same stream.
    """
    key = [int(master_seed)]
    for p in path:
        key.append(_PURPOSES[p] if isinstance(p, str) else int(p))
    return np.random.default_rng(np.random.SeedSequence(key))
