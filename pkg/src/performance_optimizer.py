"""
Performance helpers for JamSim
Operation timing, memory reporting and batched (optionally parallel) execution of sweep cells
"""

import functools
import gc
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from more_itertools import chunked
from tqdm import tqdm

try:
    import psutil
    PSUTIL_AVAILABLE = True
except ImportError:
    psutil = None
    PSUTIL_AVAILABLE = False

logger = logging.getLogger(__name__)


class PerformanceOptimizer:
    """
    Times named operations and keeps simple execution statistics
    """

    def __init__(self, memory_threshold_mb: float = 2048):
        self.stats = {
            'operations': 0,
            'total_seconds': 0.0,
            'items_processed': 0,
            'items_failed': 0,
            'slowest': None,
        }
        self.memory_threshold_mb = memory_threshold_mb

    @contextmanager
    def performance_monitor(self, operation_name: str):
        """Context manager for monitoring operation performance"""
        start_time = time.perf_counter()
        start_memory = self.get_memory_usage()
        try:
            yield
        finally:
            duration = time.perf_counter() - start_time
            memory_delta = self.get_memory_usage() - start_memory
            self.stats['operations'] += 1
            self.stats['total_seconds'] += duration
            slowest = self.stats['slowest']
            if slowest is None or duration > slowest[1]:
                self.stats['slowest'] = (operation_name, duration)
            logger.info(f"Performance: {operation_name} took {duration:.3f}s, "
                        f"memory change: {memory_delta:.1f}MB")

    def get_memory_usage(self) -> float:
        """Get current memory usage in MB"""
        if not PSUTIL_AVAILABLE:
            return 0.0
        try:
            return psutil.Process(os.getpid()).memory_info().rss / 1024 / 1024
        except psutil.Error:
            return 0.0

    def optimize_memory(self) -> float:
        """Collect garbage when memory use is above the threshold"""
        current = self.get_memory_usage()
        if current <= self.memory_threshold_mb:
            return 0.0
        logger.warning(f"High memory usage detected: {current:.1f}MB")
        collected = gc.collect()
        freed = current - self.get_memory_usage()
        logger.info(f"Memory optimization: freed {freed:.1f}MB, collected {collected} objects")
        return freed

    def batch_process_items(
        self,
        func: Callable[[Any], Any],
        items: Sequence[Any],
        workers: int = 1,
        batch_size: int = 20,
        show_progress: bool = False,
    ) -> Iterator[Tuple[Any, Any, Optional[BaseException]]]:
        """
        Apply ``func`` to every item and yield ``(item, result, error)`` in input order

        Items run in batches; with ``workers > 1`` each batch is spread over a
        process pool, so ``func`` and the items must be picklable. An item that
        raises yields its exception instead of stopping the batch.
        """
        items = list(items)
        if not items:
            return
        bar = tqdm(total=len(items), disable=not show_progress, unit='cell', leave=False)
        pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            for batch_number, batch in enumerate(chunked(items, max(1, batch_size)), start=1):
                if pool is None:
                    outcomes = [_call(func, item) for item in batch]
                else:
                    futures = [pool.submit(func, item) for item in batch]
                    outcomes = []
                    for future in futures:
                        try:
                            outcomes.append((future.result(), None))
                        except Exception as e:
                            outcomes.append((None, e))
                for item, (result, error) in zip(batch, outcomes):
                    self.stats['items_processed'] += 1
                    if error is not None:
                        self.stats['items_failed'] += 1
                    bar.update(1)
                    yield item, result, error
                if batch_number % 5 == 0:
                    self.optimize_memory()
        finally:
            bar.close()
            if pool is not None:
                pool.shutdown()

    def get_performance_stats(self) -> Dict[str, Any]:
        """Get execution statistics"""
        return {
            'memory_usage_mb': self.get_memory_usage(),
            **self.stats,
        }


def _call(func: Callable[[Any], Any], item: Any) -> Tuple[Any, Optional[BaseException]]:
    try:
        return func(item), None
    except Exception as e:
        return None, e


# Global performance optimizer instance
performance_optimizer = PerformanceOptimizer()


def batch_process_items(func: Callable[[Any], Any], items: Sequence[Any], workers: int = 1,
                        batch_size: int = 20, show_progress: bool = False):
    return performance_optimizer.batch_process_items(func, items, workers, batch_size, show_progress)


def monitor_performance(operation_name: str):
    """Decorator for monitoring performance"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with performance_optimizer.performance_monitor(operation_name):
                return func(*args, **kwargs)
        return wrapper
    return decorator
