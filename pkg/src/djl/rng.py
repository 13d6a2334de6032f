"""Counter-based random streams.

A stream is a Philox generator keyed by (seed, tag, index).  Paths are
grouped in fixed-size blocks and block ``b`` always draws from stream
index ``b``, so any partition of blocks across workers reproduces the
serial result bit for bit.
"""

import numpy as np

BLOCK = 1 << 15

SPOT = 1
PATHS = 2


def stream(seed: int, tag: int, index: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (tag << 48) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def blocks(n: int, block: int = BLOCK):
    """(block index, start, stop) covering range(n)."""
    for b, start in enumerate(range(0, n, block)):
        yield b, start, min(start + block, n)
