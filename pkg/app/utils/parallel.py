from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from app.core.settings import settings

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Order-preserving map over a thread pool.

    numpy and OpenCV release the GIL inside their kernels, so threads are
    enough for the per-row and per-offset fan-outs used here. With one
    worker the map runs inline.
    """
    items = list(items)
    workers = settings.worker_count() if workers is None else workers
    workers = max(1, min(workers, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
