"""Seed derivation for named random sub-streams.

All randomness in a run flows from a single integer seed. Components
(pool seeding, imbalance induction, SGD, acquisition) draw from named
sub-streams derived here, so each one is reproducible in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np

Tag = int | str


def _tag_key(tag: Tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    if tag < 0:
        raise ValueError(f"stream tags must be non-negative, got {tag}")
    return int(tag)


def substream(seed: int, *tags: Tag) -> np.random.Generator:
    """Return a generator for the sub-stream named by ``tags``.

    Distinct tag tuples yield statistically independent streams; the same
    (seed, tags) pair always yields the same stream.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(_tag_key(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def substream_seed(seed: int, *tags: Tag) -> int:
    """Collapse a named sub-stream to a single integer seed."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(_tag_key(t) for t in tags)
    state = np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(2)
    return int(state[0]) << 32 | int(state[1])
