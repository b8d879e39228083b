"""
Counter-based random streams.

Every random task (a tree, a permutation, a bootstrap run, a fold) draws from its own
Philox stream keyed by the analysis seed plus the task identity, so results do not
depend on how joblib schedules the work.
"""
import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _spawn_key(key: tuple[Key, ...]) -> tuple[int, ...]:
    out = []
    for part in key:
        if isinstance(part, str):
            # stable across processes, unlike hash()
            digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
            out.append(int.from_bytes(digest, "little"))
        else:
            out.append(int(part))
    return tuple(out)


def stream(seed: int, *key: Key) -> np.random.Generator:
    """Random generator for the task identified by `key` under `seed`"""
    seq = np.random.SeedSequence(int(seed), spawn_key=_spawn_key(key))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *key: Key) -> int:
    """64-bit child seed for handing a keyed task its own seed"""
    seq = np.random.SeedSequence(int(seed), spawn_key=_spawn_key(key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
