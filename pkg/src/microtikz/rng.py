"""Named splittable RNG streams.

All randomness in the package flows from one master seed through streams
keyed by string paths, e.g. ``stream(seed, "init", "enc.blocks.0.attn.wq")``.
Streams are independent of creation order and of each other, which is what
makes per-item parallel generation and per-parameter init reproducible.
"""

import hashlib

import numpy as np


def stream(seed: int, *path: str) -> np.random.Generator:
    """Return a Generator deterministically derived from (seed, path)."""
    digest = hashlib.sha256("/".join(path).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))
