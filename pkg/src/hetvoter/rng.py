"""Seed derivation.

Everything random derives from one root seed through ``numpy.random.SeedSequence``
spawn keys, so streams for different purposes never overlap:

    (0,)       shared (quenched) environment
    (1, r)     dynamics of replica r
    (2, r)     environment of replica r when environments are resampled
    (3,)       Brownian increments of the fluctuation SDE
    (4, k)     randomized restart k of the path optimizer

``derive_seed`` collapses a spawned sequence to one 64-bit integer, which is
what gets recorded in output files: ``numpy.random.default_rng(seed)``
reproduces the stream of that replica alone.
"""
import numpy as np

ENV, DYNAMICS, REPLICA_ENV, SDE, RESTART = 0, 1, 2, 3, 4


def derive_seed(root: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(root: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *key))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))
