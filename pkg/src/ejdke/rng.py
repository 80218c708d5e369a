"""Seed derivation for reproducible, scheduling-independent Monte Carlo.

Every replication gets its own 64-bit seed derived from the master seed and
its index tuple through :class:`numpy.random.SeedSequence`, so results do not
depend on which worker runs which replication.
"""
import numpy as np


def derive_seed(master, *index):
    """64-bit child seed for ``(master, *index)``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(i) for i in index))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))
