"""Deterministic random streams derived from a master seed.

Every (master, replica, lane) triple maps to its own ``SeedSequence``, so
replicas are independent of how they are scheduled and the jump-thinning
lane can be shared across runs while the noise lane differs.
"""

from __future__ import annotations

import numpy as np

JUMP_LANE = 0
NOISE_LANE = 1
REFERENCE_LANE = 2
CLT_LANE = 3
PHI_LANE = 4

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    s = int(seed)
    if not 0 <= s <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return s


def stream(master: int, replica: int, lane: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([check_seed(master), int(replica), int(lane)])))


def replica_streams(master: int, replica: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(jump stream, noise stream) for one replica."""
    return stream(master, replica, JUMP_LANE), stream(master, replica, NOISE_LANE)
