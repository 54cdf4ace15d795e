"""
Deterministic seed derivation.

Every random stream in the pipeline is addressed by a path of integers or
strings under one master seed, so the same config always reproduces the same
splits, shadows, bootstrap samples and trees regardless of worker count.
"""

import hashlib
import logging
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

SeedPart = Union[int, str]

MAX_SEED = 2**64 - 1


def _entropy(part: SeedPart) -> int:
    if isinstance(part, str):
        # Stable across processes, unlike hash().
        return int.from_bytes(hashlib.sha256(part.encode("utf-8")).digest()[:8], "little")
    if part < 0:
        raise ValueError(f"seed components must be non-negative, got {part}")
    return int(part)


def derive_seed(base_seed: int, *path: SeedPart) -> int:
    """
    Derive a 64-bit seed for the stream at ``path`` below ``base_seed``.

    Counter-style: the seed of stream ``(base, "forest", 7)`` does not depend
    on how many sibling streams exist.
    """
    entropy = [_entropy(base_seed)] + [_entropy(p) for p in path]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(seed: int, *path: SeedPart) -> np.random.Generator:
    """Generator for the stream at ``path`` (the stream ``seed`` itself when no path)."""
    if not path:
        return np.random.default_rng(_entropy(seed))
    return np.random.default_rng([_entropy(seed)] + [_entropy(p) for p in path])


def validate_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed
