"""Deterministic per-stage seeds derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(master: int, *keys) -> int:
    """Seed for the stage named by ``keys``.

    Each key path maps to its own SeedSequence child, so adding a new stage
    never shifts the seeds of existing ones.
    """
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(_key(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint32)[0])
