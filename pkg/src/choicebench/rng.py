"""Named random streams derived from a single master seed.

Every consumer asks for a generator by purpose, e.g.
``stream(seed, "attributes", "train")``. Names are hashed into the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so streams are
independent of each other and of the order in which they are requested.
Adding a new purpose never perturbs existing ones.

Documented purposes used across the package:

``attributes/<split>``   uniform attribute draws for synthetic data
``errors/<split>``       random-utility error draws for synthetic data
``mc/<name>``            Monte Carlo oracles (true shares, probit probabilities)
``split``                train/test partitioning
``folds``                K-fold assignment
``fit/<model>``          model initialisation, bootstrap, subsampling
``tree/<b>``             bootstrap and feature subsets of forest tree b
``round/<r>``            row and column subsampling of boosting round r
``hpo/<model>``          hyperparameter search
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed: int, *names: str | int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Return a PCG64 generator for the purpose identified by ``names``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))


def child_seed(seed: int, *names: str | int) -> int:
    """A 63-bit integer seed for the named purpose (for configs that store ints)."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
