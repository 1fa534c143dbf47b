"""Keyed random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from a master seed and a tuple of integer coordinates (replicate id,
method code, cluster count, ...). Streams depend only on their coordinates,
never on the order in which they are requested, so work can be scheduled on
any number of threads and still reproduce bit-for-bit.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master_seed, *keys):
    """Fold integer coordinates into a new 64-bit seed."""
    ss = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(master_seed, *keys):
    """Counter-based generator keyed by ``(master_seed, *keys)``."""
    ss = np.random.SeedSequence(int(master_seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    key = ss.generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
