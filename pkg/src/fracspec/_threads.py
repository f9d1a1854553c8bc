"""Thread-pool helper for embarrassingly parallel parameter sweeps."""

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV_VAR = "FRACSPEC_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map preserving input order; threads sized by FRACSPEC_THREADS."""
    items = list(items)
    workers = min(thread_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
