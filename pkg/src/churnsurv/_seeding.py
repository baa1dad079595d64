"""Named sub-seed derivation so one root seed drives every stage."""
import hashlib

import numpy as np


def derive_seed(seed, *names):
    """Stable 63-bit sub-seed for ``(seed, *names)``; independent of PYTHONHASHSEED."""
    key = "/".join([str(int(seed))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def rng_for(seed, *names):
    return np.random.default_rng(derive_seed(seed, *names))
