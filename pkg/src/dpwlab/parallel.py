"""Thread-count resolution and a order-preserving parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None) -> int:
    """Explicit value, else ``DPWLAB_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("DPWLAB_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def pmap(fn, items, threads=None):
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
