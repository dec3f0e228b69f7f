"""Named RNG substreams.

All randomness in a pipeline run flows from a single master seed. Each
consumer asks for a stream by name; the (seed, name) pair deterministically
derives an independent generator, so reruns are bit-reproducible and adding
a new consumer never perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_LOG: list[tuple[int, str]] = []


def stream(seed: int, name: str) -> np.random.Generator:
    """Derive the generator for substream `name` under master `seed`."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    _LOG.append((seed, name))
    return np.random.default_rng([seed, key])


def stream_log() -> list[tuple[int, str]]:
    """Substreams requested so far (seed, name), in request order."""
    return list(_LOG)
