"""Deterministic seed derivation.

A single master seed drives every random decision in a run. Each consumer
derives its own independent stream from (master, role[, index]) so that
partial pipelines stay reproducible: rerunning only the training stage with
the same seed touches the same streams in the same order regardless of what
else ran before.

Role registry (stable, append-only):

====  =======================================
role  consumer
====  =======================================
0     offline dataset expansion (half swaps)
1     per-epoch batch order
2     online cutmix (partner choice and boxes)
3     online horizontal flip coin
4     online mixup (partner choice and lambda)
5     weight initialisation
6     synthetic image generator (per sample)
7     train/validation split
8     augment CLI pair sampling
====  =======================================
"""

import numpy as np

from .errors import ArgumentError

ROLE_EXPAND = 0
ROLE_BATCH_ORDER = 1
ROLE_CUTMIX = 2
ROLE_HFLIP = 3
ROLE_MIXUP = 4
ROLE_INIT = 5
ROLE_SYNTH = 6
ROLE_VAL_SPLIT = 7
ROLE_AUGMENT_CLI = 8


def _check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ArgumentError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def rng_for(seed: int, role: int, index: int | None = None) -> np.random.Generator:
    """Return the generator for one (master seed, role[, index]) stream."""
    key = [_check_seed(seed), int(role)]
    if index is not None:
        key.append(int(index))
    return np.random.default_rng(key)


def int_seed(seed: int, role: int) -> int:
    """Collapse a derived stream to one non-negative int63, e.g. for torch."""
    state = np.random.SeedSequence([_check_seed(seed), int(role)]).generate_state(2)
    return (int(state[0]) * (1 << 32) + int(state[1])) & ((1 << 63) - 1)
