"""Keyed, counter-based random streams for reproducible (and parallelizable) runs.

Every stochastic stage derives its own Philox generator from
``(master_seed, stage_tag, *indices)``.  Streams are a pure function of the
key, never of thread or worker identity, so results are identical for any
degree of parallelism.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = ["tag_to_int", "seed_sequence", "stream", "as_generator", "parallel_map"]


def tag_to_int(tag: str) -> int:
    """Stable 32-bit integer for a stage tag string."""
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(master_seed: int, *keys) -> np.random.SeedSequence:
    """SeedSequence keyed by a master seed plus stage tags / indices."""
    entropy = [int(master_seed) & 0xFFFFFFFF]
    for k in keys:
        entropy.append(tag_to_int(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


def stream(master_seed: int, *keys) -> np.random.Generator:
    """Independent Philox generator for the given key."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *keys)))


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept an int seed, a SeedSequence, or a Generator.

    Returns ``(generator, seed)`` where ``seed`` is the integer seed when one
    was supplied (recorded in reports), else None.
    """
    if isinstance(rng, np.random.Generator):
        return rng, None
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(rng)), None
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng)), int(rng)
    raise TypeError(f"expected int seed, SeedSequence or Generator, got {type(rng)!r}")


def parallel_map(fn, items, workers: int = 1) -> list:
    """Map preserving item order; results do not depend on ``workers``.

    ``fn`` must be picklable (module-level) when ``workers > 1``.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
