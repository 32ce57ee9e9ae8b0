"""Kernel dispatch: numba-jitted fast path with a pure-numpy twin.

Set SPOD_DISABLE_NUMBA=1 (or install without numba) to force the numpy
path. The selection happens once at import time; both implementations
live in _kernels and are importable directly for benchmarking.
"""

from __future__ import annotations

import os


def _env_disabled() -> bool:
    return os.environ.get("SPOD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


NUMBA_AVAILABLE = False
if not _env_disabled():
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE


def set_thread_cap(n: int) -> None:
    """Cap worker threads on the jit path; a no-op on the numpy path."""
    if n < 1:
        raise ValueError("thread cap must be >= 1")
    if USE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
