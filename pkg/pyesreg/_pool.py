# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed

logger = logging.getLogger(__name__)


def resolve_workers(workers):
    if workers is None:
        return os.cpu_count() or 1
    return max(1, int(workers))


def pool_map(func, items, workers=1):
    """
    [func(item) for item in items], optionally on a process pool.

    func must live at module level so ProcessPoolExecutor can pickle it. Results come
    back in submission order whatever the completion order; workers <= 1 runs
    in-process.
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    results = [None] * len(items)
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as executor:
        futures = {executor.submit(func, item): i for i, item in enumerate(items)}
        for done, future in enumerate(as_completed(futures), 1):
            results[futures[future]] = future.result()
            if done % max(1, len(items) // 10) == 0:
                logger.debug("%d/%d tasks done", done, len(items))
    return results
