"""Split one root seed into independent, reproducible streams per purpose."""
import zlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_rng(root_seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return a Generator seeded from (root_seed, purpose, *keys).

    The same arguments always produce the same stream; different purposes
    ("init", "shuffle", "generator", ...) never share one.
    """
    sequence = np.random.SeedSequence(
        entropy=int(root_seed),
        spawn_key=(purpose_key(purpose), *(int(k) for k in keys)),
    )
    return np.random.Generator(np.random.PCG64(sequence))
