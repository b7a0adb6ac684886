"""
Seed derivation for reproducible, order-independent Monte Carlo.

Every random stream in the project is a pure function of a master seed and a
key tuple, so replicas can run on any worker in any order.
"""
import numpy as np

MASK64 = (1 << 64) - 1

# Purpose tags keep streams used for different jobs apart.
PURPOSE_PATHS = 1
PURPOSE_SUFFIX = 2
PURPOSE_REFERENCE = 3
PURPOSE_MOMENTS = 4
PURPOSE_BOOTSTRAP = 5
PURPOSE_PROBE = 6


def sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))


def generator(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for (seed, key)."""
    return np.random.default_rng(sequence(seed, *key))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key) into a fresh 64-bit seed."""
    words = sequence(seed, *key).generate_state(2, dtype=np.uint32)
    return (int(words[0]) << 32) | int(words[1])
