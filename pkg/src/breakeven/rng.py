"""Deterministic random-number plumbing.

Every stochastic routine in the package draws from a PCG64 generator seeded
explicitly, so identical seeds give bitwise-identical results. The algorithm
name is recorded in run metadata (see trainer/cli) so logs are reproducible.
"""

from __future__ import annotations

import numpy as np

PRNG_ALGORITHM = "pcg64"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Build a generator for ``seed``; extra integers select substreams.

    Substreams are used so sweep cells and per-trajectory ensembles get
    independent but reproducible sequences: the (seed, *stream) tuple fully
    determines the state.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Collapse (seed, *stream) into a single u64 for logging purposes."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
