"""
On-disk cache of sweep cell results

A cell row is a pure function of the scenario document, the gain, the run
index and the seed, so rows can be reused across sweeps. Keys hash the
canonical JSON form of that description together with the model version.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import diskcache
import orjson

logger = logging.getLogger(__name__)

# Bump when simulation semantics change so stale rows are not reused
MODEL_VERSION = 1


def cache_key(description: Dict[str, Any], namespace: str = 'sweep') -> str:
    payload = orjson.dumps({'v': MODEL_VERSION, 'ns': namespace, 'd': description},
                           option=orjson.OPT_SORT_KEYS | orjson.OPT_NON_STR_KEYS)
    return hashlib.blake2b(payload, digest_size=20).hexdigest()


class ResultCache:
    def __init__(self, directory: Union[str, Path], size_limit_mb: int = 256, expire_s: Optional[float] = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.expire_s = expire_s
        self._cache = diskcache.Cache(str(self.directory), size_limit=size_limit_mb * 1024 * 1024)
        self.stats = {'hits': 0, 'misses': 0, 'writes': 0}

    def get(self, description: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        value = self._cache.get(cache_key(description))
        if value is None:
            self.stats['misses'] += 1
            return None
        self.stats['hits'] += 1
        return orjson.loads(value)

    def set(self, description: Dict[str, Any], row: Dict[str, Any]) -> None:
        self._cache.set(cache_key(description), orjson.dumps(row), expire=self.expire_s)
        self.stats['writes'] += 1

    def clear(self) -> int:
        removed = self._cache.clear()
        logger.info(f"Result cache cleared: {removed} entries")
        return removed

    def __len__(self) -> int:
        return len(self._cache)

    def close(self) -> None:
        self._cache.close()

    def __enter__(self) -> 'ResultCache':
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_cache(directory: Union[str, Path, None], settings: Optional[Dict[str, Any]] = None) -> Optional[ResultCache]:
    """Cache at ``directory`` using the ``CACHE`` settings, or ``None`` when no directory is given"""
    if directory is None:
        return None
    settings = settings or {}
    return ResultCache(directory, settings.get('size_limit_mb', 256), settings.get('expire_s'))
