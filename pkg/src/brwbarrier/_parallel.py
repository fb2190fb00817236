"""Ordered fan-out over threads; the numba kernels release the GIL."""
from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers: int = 1):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chunk_ranges(total: int, size: int):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]
