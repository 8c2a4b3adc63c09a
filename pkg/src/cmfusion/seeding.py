"""Deterministic named substreams derived from a single run seed.

Every source of randomness in the package (parameter init, batch shuffling,
synthetic data, coordinate sampling for gradient checks) draws from a
generator obtained here, so one seed fully determines every artifact.
"""

import hashlib

import numpy as np


def _name_to_ints(name) -> list[int]:
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    # four 64-bit words keep the full digest as SeedSequence entropy
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def substream(seed: int, *names) -> np.random.Generator:
    """Return a PCG64 generator for the (seed, *names) stream.

    Streams with different names are statistically independent; the same
    (seed, names) pair yields an identical stream on every machine.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        entropy.extend(_name_to_ints(name))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
