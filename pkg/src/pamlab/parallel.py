"""Deterministic chunked execution over replica indices.

Work is split into fixed-size chunks of replica indices.  Each chunk is a
pure function of ``(start, count)`` and its arguments, so the concatenated
result does not depend on the number of workers or on completion order.
"""

from concurrent.futures import ProcessPoolExecutor

import numpy as np

DEFAULT_CHUNK = 256


def chunk_bounds(total, chunk):
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    return [(s, min(chunk, total - s)) for s in range(0, total, chunk)]


def map_chunks(func, total, *args, chunk=DEFAULT_CHUNK, workers=1):
    """``concatenate([func(start, count, *args) for each chunk])`` along axis 0."""
    bounds = chunk_bounds(total, chunk)
    if not bounds:
        return np.zeros((0,))
    if workers <= 1 or len(bounds) == 1:
        parts = [func(s, c, *args) for s, c in bounds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            futures = [pool.submit(func, s, c, *args) for s, c in bounds]
            parts = [f.result() for f in futures]
    return np.concatenate([np.asarray(p) for p in parts], axis=0)
