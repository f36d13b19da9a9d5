"""Ordered parallel map over independent work units."""

import os
from concurrent.futures import ThreadPoolExecutor

_default_threads = None


def default_threads():
    if _default_threads is not None:
        return _default_threads
    env = os.environ.get("SQFC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def set_default_threads(n):
    global _default_threads
    _default_threads = None if n is None else max(1, int(n))


def pmap(fn, items, threads=None):
    """``[fn(x) for x in items]`` evaluated on up to ``threads`` workers.

    Results come back in input order whatever the worker count, so
    aggregation downstream is deterministic.
    """
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items))
