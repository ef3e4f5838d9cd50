"""Named, reproducible random streams derived from a single master seed."""

import zlib

import numpy as np


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for a named purpose.

    The same (master_seed, name) pair always yields the same stream, and
    distinct names yield statistically independent streams.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([master_seed, key]))


def substream(master_seed: int, name: str, index: int) -> np.random.Generator:
    """Per-item stream (e.g. one per image or per training step).

    A fixed marker word separates the substream entropy space from plain
    streams (SeedSequence treats trailing zeros as absent, so [seed, key, 0]
    would otherwise collide with [seed, key]).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence([master_seed, key, 0x5355_4253, index]))
