from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from scaf.data.traces import TraceMatrix


class TraceCache:
    """In-memory cache for loaded trace sets and their manifests."""

    def __init__(self) -> None:
        # resolved path -> (mtime_ns, traces)
        self._traces_cache: Dict[Path, Tuple[int, TraceMatrix]] = {}
        self._manifest_cache: Dict[Path, Tuple[int, Dict[str, str]]] = {}

    @staticmethod
    def _key(path: Union[str, Path]) -> Tuple[Path, int]:
        resolved = Path(path).resolve()
        try:
            mtime = resolved.stat().st_mtime_ns
        except OSError:
            mtime = -1
        return resolved, mtime

    def get_traces(self, path: Union[str, Path]) -> Optional[TraceMatrix]:
        """Get a cached trace set if the file has not changed since it was cached."""
        key, mtime = self._key(path)
        entry = self._traces_cache.get(key)
        if entry is None or entry[0] != mtime:
            return None
        return entry[1]

    def set_traces(self, path: Union[str, Path], traces: TraceMatrix) -> None:
        key, mtime = self._key(path)
        self._traces_cache[key] = (mtime, traces)

    def get_manifest(self, path: Union[str, Path]) -> Optional[Dict[str, str]]:
        key, mtime = self._key(path)
        entry = self._manifest_cache.get(key)
        if entry is None or entry[0] != mtime:
            return None
        return dict(entry[1])

    def set_manifest(self, path: Union[str, Path], manifest: Dict[str, str]) -> None:
        key, mtime = self._key(path)
        self._manifest_cache[key] = (mtime, dict(manifest))

    def clear(self) -> None:
        self._traces_cache.clear()
        self._manifest_cache.clear()

    def __len__(self) -> int:
        return len(self._traces_cache)


# Global cache instance
_cache = TraceCache()


def get_cache() -> TraceCache:
    """Get the global cache instance."""
    return _cache
