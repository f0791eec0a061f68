"""Named, splittable random streams.

Every stream is a :class:`numpy.random.Philox` counter-based generator keyed
by ``SeedSequence(master_seed, spawn_key=(stream_id, index))``. The stream
id is the CRC-32 of the stream name, so ``"chains"`` stream 3 is always the
same sequence for a given master seed, independent of how many other
streams were created or in which order.

Documented streams:

``chains``          one per chain index (init, momenta, MH uniforms)
``eval/orderings``  random chain orderings for cumulative LPPD
``data/split``      dataset shuffling before the train/val/test split
``data/synthetic``  noise of bundled synthetic tasks
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def generator(seed: int, name: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_id(name), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def chain_generators(seed: int, n_chains: int) -> list[np.random.Generator]:
    return [generator(seed, "chains", k) for k in range(n_chains)]
