"""Deterministic parallel map over replication tasks.

Results are assembled in submission order and every worker (including the
calling process) pins its BLAS pools to one thread, so outputs are
byte-identical regardless of the worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor

_BLAS_LIMITER = None


def pin_blas():
    """Limit all BLAS/OpenMP pools in this process to a single thread."""
    global _BLAS_LIMITER
    if _BLAS_LIMITER is None:
        import threadpoolctl

        _BLAS_LIMITER = threadpoolctl.threadpool_limits(limits=1)


def _init_worker():
    pin_blas()


def effective_threads(threads):
    """Resolve a thread-count request (0 or None means all visible cores)."""
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def pmap(fn, items, threads=1, chunksize=1):
    """Map ``fn`` over ``items``; results in input order.

    ``threads <= 1`` runs serially in-process.  More threads use a process
    pool with BLAS pinned in each worker; ``fn`` and items must be picklable.
    """
    pin_blas()
    items = list(items)
    threads = effective_threads(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
