"""Process-wide execution settings (thread count, deterministic reductions)."""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

_state = {"threads": 1, "deterministic": True}


def threads() -> int:
    return _state["threads"]


def deterministic() -> bool:
    return _state["deterministic"]


def configure(threads: int | None = None, deterministic: bool | None = None) -> None:
    if threads is not None:
        if threads < 1:
            raise ValueError("threads must be >= 1")
        _state["threads"] = int(threads)
    if deterministic is not None:
        _state["deterministic"] = bool(deterministic)


@contextlib.contextmanager
def settings(threads: int | None = None, deterministic: bool | None = None):
    saved = dict(_state)
    configure(threads, deterministic)
    try:
        yield
    finally:
        _state.update(saved)


@contextlib.contextmanager
def reductions():
    """Pin BLAS to one thread when deterministic mode is on.

    Multi-threaded GEMM may split the inner dimension differently depending on
    the pool size, which changes summation order.
    """
    if _state["deterministic"]:
        with threadpool_limits(limits=1, user_api="blas"):
            yield
    else:
        with threadpool_limits(limits=_state["threads"], user_api="blas"):
            yield


def pmap(fn, items):
    """Ordered map over independent items using the configured pool size."""
    items = list(items)
    n = _state["threads"]
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))
