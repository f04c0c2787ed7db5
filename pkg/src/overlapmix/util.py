"""Shared helpers: counter-based RNG streams, read-only arrays, small parallel map."""

from __future__ import annotations

import concurrent.futures
import os
from typing import Any, Callable, Iterable, Sequence

import numpy as np

WORKERS_ENV = "OVERLAPMIX_WORKERS"
OUTDIR_ENV = "OVERLAPMIX_OUTDIR"


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for (seed, task index...) so parallel tasks reproduce.

    Distinct ``stream`` tuples give statistically independent streams for the
    same base seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    """Owned, C-contiguous, read-only copy. Safe to share across threads."""
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn: Callable[[Any], Any], items: Sequence[Any], workers: int = 1) -> list:
    """Map preserving order; serial when workers == 1.

    ``fn`` must be a module-level callable when workers > 1 (process pool
    pickling). Results are collected in input order so downstream writes stay
    deterministic regardless of worker scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def quartile_summary(values: np.ndarray) -> dict[str, float]:
    """min / q25 / median / q75 / max of a 1-d array."""
    v = np.asarray(values, dtype=float)
    qs = np.percentile(v, [0, 25, 50, 75, 100])
    return {
        "min": float(qs[0]),
        "q25": float(qs[1]),
        "median": float(qs[2]),
        "q75": float(qs[3]),
        "max": float(qs[4]),
    }
