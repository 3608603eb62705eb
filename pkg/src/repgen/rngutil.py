"""Deterministic named random substreams.

Every stochastic component draws from its own stream derived from
(root seed, stream name), so enabling or disabling one component never
shifts the draws of another.
"""

import hashlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 generator for (root_seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(root_seed) & (2**64 - 1), tag]))
