import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    """Named sub-seed, stable across runs and platforms."""
    digest = hashlib.blake2b(digest_size=8)
    digest.update(str(int(seed)).encode())
    for name in names:
        digest.update(b"/")
        digest.update(str(name).encode())
    return int.from_bytes(digest.digest(), "little") >> 1


def make_rng(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
