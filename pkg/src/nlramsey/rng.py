"""Seed derivation for reproducible simulations.

Every stochastic unit (a shot, a trajectory, a block) owns an explicit 64-bit
seed. Generators are Philox (counter-based) keyed directly by that seed, so a
result depends only on its seed and never on scheduling or worker count.
"""
from __future__ import annotations

import numpy as np

STREAM_SHOTS = 1
STREAM_BLOCK = 2
STREAM_TRAJECTORIES = 3
STREAM_ENSEMBLE = 4


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seeds(master_seed: int, count: int, *path: int) -> np.ndarray:
    """`count` uint64 seeds for the sub-stream identified by `path` under `master_seed`."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return ss.generate_state(count, dtype=np.uint64)


def derive_seed(master_seed: int, *path: int) -> int:
    return int(derive_seeds(master_seed, 1, *path)[0])
