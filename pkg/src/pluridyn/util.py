"""Shared helpers: deterministic RNG streams, hashing, block statistics."""
from __future__ import annotations

import hashlib
import zlib

import numpy as np

__all__ = ["child_rng", "child_seed", "sha256_bytes", "sha256_file", "block_mean_stderr"]


def _tag_int(tag) -> int:
    """Stable 32-bit integer for any printable tag."""
    return zlib.crc32(repr(tag).encode("utf-8"))


def child_seed(seed: int, *tags) -> np.random.SeedSequence:
    """Deterministic child seed sequence for (seed, tags).

    Same (seed, tags) always yields the same stream, independent of call
    order; different tags decorrelate streams.
    """
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF] + [_tag_int(t) for t in tags])


def child_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed(seed, *tags)))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def block_mean_stderr(x: np.ndarray, nblocks: int = 20) -> tuple[float, float]:
    """Mean of a (possibly autocorrelated) sequence with a block-means stderr.

    Splits x into nblocks contiguous blocks; the spread of block means gives a
    stderr that is honest for short-range-correlated samples, unlike the naive
    iid formula.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        return float("nan"), float("nan")
    nblocks = max(2, min(nblocks, n))
    usable = (n // nblocks) * nblocks
    blocks = x[:usable].reshape(nblocks, -1).mean(axis=1)
    mean = float(x.mean())
    stderr = float(blocks.std(ddof=1) / np.sqrt(nblocks))
    return mean, stderr
