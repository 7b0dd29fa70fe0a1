"""Portable counter-based random streams.

Every stream is ``numpy.random.Philox`` (Philox4x64-10) keyed by the 64-bit
seed and a 64-bit stream id. The stream id is the first 8 bytes (little
endian) of BLAKE2b over the stream path, e.g. ``("scene", 12)`` encodes as
``b"scene/12"``. No platform default generator is involved.
"""
import hashlib

import numpy as np

DESCRIPTION = "numpy Philox4x64-10; key = (seed, blake2b-64 of '/'-joined stream path)"

_MASK64 = (1 << 64) - 1


def stream_id(*path):
    raw = "/".join(str(p) for p in path).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def make_rng(seed, *path):
    """Independent generator for ``(seed, path)``."""
    key = np.array([int(seed) & _MASK64, stream_id(*path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
