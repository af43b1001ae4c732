"""Binary trace-set container ("SCAF") and its key=value manifest sidecar.

Layout, little-endian throughout::

    magic     4 bytes  b"SCAF"
    version   u16      1
    M         u32      number of traces
    N         u32      samples per trace
    M records of (key_byte u8, plaintext_byte u8, device_id u16, N x float64)
"""

import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
from dotenv import dotenv_values

from scaf.data.cache import get_cache
from scaf.data.traces import TraceMatrix
from scaf.errors import TraceFormatError

TRACE_MAGIC = b"SCAF"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHII")

_cache = get_cache()


def _record_dtype(n: int) -> np.dtype:
    return np.dtype(
        [("key", "u1"), ("plaintext", "u1"), ("device", "<u2"), ("samples", "<f8", (n,))]
    )


def manifest_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".manifest")


def write_traces(
    path: Union[str, Path],
    traces: TraceMatrix,
    manifest: Optional[Mapping[str, object]] = None,
) -> Path:
    """Write a trace set and its manifest; returns the trace file path."""
    path = Path(path)
    m, n = traces.shape
    records = np.empty(m, dtype=_record_dtype(n))
    records["key"] = traces.key_bytes
    records["plaintext"] = traces.plaintext_bytes
    records["device"] = traces.device_ids
    records["samples"] = traces.samples

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, m, n))
        f.write(records.tobytes())

    entries: Dict[str, object] = {
        "format_version": TRACE_VERSION,
        "n_traces": m,
        "trace_length": n,
        "devices": ",".join(str(d) for d in traces.devices()),
    }
    if manifest:
        entries.update(manifest)
    write_manifest(manifest_path(path), entries)
    return path


def write_manifest(path: Union[str, Path], entries: Mapping[str, object]) -> None:
    lines = [f"{key}={_manifest_value(value)}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _manifest_value(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):  # str enums
        return str(value.value)
    return str(value)


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    """Manifest entries of a trace file (or of a .manifest file itself)."""
    path = Path(path)
    target = path if path.suffix == ".manifest" else manifest_path(path)
    if not target.exists():
        return {}
    if cached := _cache.get_manifest(target):
        return cached
    values = {k: v for k, v in dotenv_values(target).items() if v is not None}
    _cache.set_manifest(target, values)
    return values


def read_traces(path: Union[str, Path]) -> TraceMatrix:
    """Parse a SCAF file. Bad magic, unknown version or truncation raise TraceFormatError."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TraceFormatError(f"{path}: file too short for a SCAF header ({len(data)} bytes)")
    magic, version, m, n = _HEADER.unpack_from(data, 0)
    if magic != TRACE_MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}, expected {TRACE_MAGIC!r}")
    if version != TRACE_VERSION:
        raise TraceFormatError(f"{path}: unsupported format version {version}")
    dtype = _record_dtype(n)
    expected = _HEADER.size + m * dtype.itemsize
    if len(data) != expected:
        raise TraceFormatError(
            f"{path}: expected {expected} bytes for {m} x {n} traces, found {len(data)}"
        )
    records = np.frombuffer(data, dtype=dtype, count=m, offset=_HEADER.size)
    return TraceMatrix(
        samples=records["samples"].astype(np.float64),
        key_bytes=records["key"].astype(np.int64),
        plaintext_bytes=records["plaintext"].astype(np.int64),
        device_ids=records["device"].astype(np.int64),
    )


def load_traces(path: Union[str, Path]) -> TraceMatrix:
    """Load a trace set from cache or disk."""
    if cached := _cache.get_traces(path):
        return cached
    traces = read_traces(path)
    _cache.set_traces(path, traces)
    return traces
