# app/utils/rng.py

from enum import IntEnum
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.Generator]


class Stream(IntEnum):
    """
    Purpose tags folded into every derived key, so the randomness used for
    one purpose never overlaps another even under the same (round, device).
    """

    DATA = 1
    PARTITION = 2
    INIT = 3
    LOCAL_TRAIN = 4
    QUANTIZE = 5
    EVAL = 6
    SELECTION = 7
    BENCH = 8


def stream(seed: SeedLike, *keys: int) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, *keys).

    The key is hashed through SeedSequence into a Philox counter-mode
    generator; identical keys give identical streams regardless of call order.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("keys cannot be applied to an existing Generator")
        return seed
    if isinstance(seed, (int, np.integer)):
        entropy: list[int] = [int(seed)]
    else:
        entropy = [int(s) for s in seed]
    if any(k < 0 for k in entropy) or any(int(k) < 0 for k in keys):
        raise ValueError("seed keys must be non-negative")
    seq = np.random.SeedSequence(
        entropy=entropy, spawn_key=tuple(int(k) for k in keys)
    )
    return np.random.Generator(np.random.Philox(seq))
