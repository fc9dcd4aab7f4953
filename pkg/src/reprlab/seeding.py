"""Named random substreams fanned out from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(names) -> list[int]:
    return [zlib.crc32(str(n).encode()) for n in names]


def stream(master_seed: int, *names) -> np.random.Generator:
    """Independent generator for the consumer identified by ``names``.

    Adding a consumer never perturbs the draws of another one.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=_key(names))
    return np.random.default_rng(ss)


def seed_int(master_seed: int, *names) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=_key(names))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
