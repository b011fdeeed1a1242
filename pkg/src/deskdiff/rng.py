"""Seeded random streams.

All randomness flows through ``numpy.random.Generator`` backed by PCG64.
Independent streams are derived from one master seed through
``SeedSequence`` spawn keys, so stream ``k`` of seed ``s`` is the same
sequence on every platform numpy supports.  Standard normals use numpy's
ziggurat transform (``Generator.standard_normal``), which is exact in the
tails up to float64 resolution.
"""

from __future__ import annotations

import numpy as np

# spawn keys of the named streams used across the package
STREAMS = {
    "forward": 0,
    "train": 1,
    "eval": 2,
    "sample": 3,
    "init": 4,
    "cold": 5,
    "pool": 6,
    "data": 7,
    "elbo": 8,
}


def make_rng(seed: int, stream: int | str | None = None) -> np.random.Generator:
    """Generator for ``seed``; with ``stream`` set, an independent child stream."""
    if stream is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    key = STREAMS[stream] if isinstance(stream, str) else int(stream)
    ss = np.random.SeedSequence(seed, spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))
