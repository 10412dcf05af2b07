import os
import zlib

import numpy as np

THREADS_ENV = "SURVENSEMBLE_THREADS"


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the named sub-stream ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def derive_seed(seed: int, *keys) -> int:
    """Integer seed for a component that takes a plain seed (a forest, a chain)."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, np.uint32)[0])
