"""In-memory trace sets: the M x N sample matrix plus per-trace labels."""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from scaf.data.models import SplitSpec, TraceLabel
from scaf.errors import DimensionError, EmptyInputError, InsufficientDataError, RangeError

# A single power trace, amplitudes in arbitrary units
Trace = npt.NDArray[np.float64]


def as_trace(values: Union[Sequence[float], np.ndarray]) -> Trace:
    """Validate and convert a 1-D sequence of samples into a float64 trace."""
    trace = np.array(values, dtype=np.float64)
    if trace.ndim != 1:
        raise DimensionError(f"a trace is one-dimensional, got shape {trace.shape}")
    if trace.size == 0:
        raise EmptyInputError("a trace needs at least one sample")
    if not np.all(np.isfinite(trace)):
        raise RangeError("trace samples must be finite (no NaN/Inf)")
    return trace


def _label_array(values: Optional[Iterable[int]], m: int, default: int, upper: int, name: str) -> np.ndarray:
    if values is None:
        return np.full(m, default, dtype=np.int64)
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.shape[0] != m:
        raise DimensionError(f"{name}: {arr.shape[0]} labels for {m} traces")
    if arr.size and (arr.min() < (1 if name == "device_ids" else 0) or arr.max() > upper):
        raise RangeError(f"{name} out of range [.., {upper}]")
    return arr


@dataclass(frozen=True, eq=False)
class TraceMatrix:
    """Immutable M x N matrix of power samples with key/plaintext/device labels.

    Arrays are copied on construction and marked read-only, so a TraceMatrix can
    be shared between threads.
    """

    samples: np.ndarray
    key_bytes: np.ndarray
    plaintext_bytes: np.ndarray
    device_ids: np.ndarray

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise DimensionError(f"samples must be 2-D (M x N), got shape {samples.shape}")
        m, n = samples.shape
        if m == 0 or n == 0:
            raise EmptyInputError(f"a trace matrix needs M >= 1 and N >= 1, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise RangeError("trace samples must be finite (no NaN/Inf)")

        keys = _label_array(self.key_bytes, m, 0, 255, "key_bytes")
        plaintexts = _label_array(self.plaintext_bytes, m, 0, 255, "plaintext_bytes")
        devices = _label_array(self.device_ids, m, 1, 0xFFFF, "device_ids")

        for arr in (samples, keys, plaintexts, devices):
            arr.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "key_bytes", keys)
        object.__setattr__(self, "plaintext_bytes", plaintexts)
        object.__setattr__(self, "device_ids", devices)

    @classmethod
    def from_samples(
        cls,
        samples: Union[Sequence[Sequence[float]], np.ndarray],
        key_bytes: Optional[Iterable[int]] = None,
        plaintext_bytes: Optional[Iterable[int]] = None,
        device_ids: Optional[Iterable[int]] = None,
    ) -> "TraceMatrix":
        """Build a matrix; missing labels default to key 0, plaintext 0, device 1."""
        m = np.asarray(samples).shape[0] if np.ndim(samples) >= 1 else 0
        return cls(
            samples=np.asarray(samples, dtype=np.float64),
            key_bytes=_label_array(key_bytes, m, 0, 255, "key_bytes"),
            plaintext_bytes=_label_array(plaintext_bytes, m, 0, 255, "plaintext_bytes"),
            device_ids=_label_array(device_ids, m, 1, 0xFFFF, "device_ids"),
        )

    @property
    def n_traces(self) -> int:
        return int(self.samples.shape[0])

    @property
    def trace_length(self) -> int:
        return int(self.samples.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_traces, self.trace_length)

    def __len__(self) -> int:
        return self.n_traces

    def trace(self, i: int) -> Trace:
        return self.samples[i]

    def label(self, i: int) -> TraceLabel:
        return TraceLabel(
            key_byte=int(self.key_bytes[i]),
            plaintext_byte=int(self.plaintext_bytes[i]),
            device_id=int(self.device_ids[i]),
        )

    @property
    def labels(self) -> List[TraceLabel]:
        return [self.label(i) for i in range(self.n_traces)]

    def devices(self) -> List[int]:
        """Sorted unique device ids present in the set."""
        return [int(d) for d in np.unique(self.device_ids)]

    def subset(self, indices: Union[Sequence[int], np.ndarray]) -> "TraceMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size == 0:
            raise EmptyInputError("subset selects no traces")
        return TraceMatrix(
            samples=self.samples[idx],
            key_bytes=self.key_bytes[idx],
            plaintext_bytes=self.plaintext_bytes[idx],
            device_ids=self.device_ids[idx],
        )

    def with_samples(self, samples: np.ndarray) -> "TraceMatrix":
        """Same labels, new sample matrix (the width may differ, the row count may not)."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] != self.n_traces:
            raise DimensionError(
                f"replacement samples must have {self.n_traces} rows, got shape {samples.shape}"
            )
        return TraceMatrix(
            samples=samples,
            key_bytes=self.key_bytes,
            plaintext_bytes=self.plaintext_bytes,
            device_ids=self.device_ids,
        )


def as_samples(data: Union[TraceMatrix, np.ndarray, Sequence[Sequence[float]]]) -> np.ndarray:
    """Sample matrix of a TraceMatrix, or a validated 2-D float64 array."""
    if isinstance(data, TraceMatrix):
        return data.samples
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D sample matrix, got shape {arr.shape}")
    return arr


def merge(sets: Sequence[TraceMatrix]) -> TraceMatrix:
    """Concatenate trace sets in order, keeping each row's device label."""
    if not sets:
        raise EmptyInputError("merge needs at least one trace set")
    n = sets[0].trace_length
    for i, s in enumerate(sets):
        if s.trace_length != n:
            raise DimensionError(
                f"merge: set {i} has trace length {s.trace_length}, expected {n}"
            )
    if len(sets) == 1:
        return sets[0]
    return TraceMatrix(
        samples=np.concatenate([s.samples for s in sets], axis=0),
        key_bytes=np.concatenate([s.key_bytes for s in sets]),
        plaintext_bytes=np.concatenate([s.plaintext_bytes for s in sets]),
        device_ids=np.concatenate([s.device_ids for s in sets]),
    )


def filter_devices(traces: TraceMatrix, device_ids: Iterable[int]) -> TraceMatrix:
    """Rows belonging to the given devices, original order preserved."""
    wanted = np.asarray(list(device_ids), dtype=np.int64)
    mask = np.isin(traces.device_ids, wanted)
    if not mask.any():
        raise EmptyInputError(f"no traces for devices {wanted.tolist()}")
    return traces.subset(np.flatnonzero(mask))


def shuffled(traces: TraceMatrix, seed: int) -> TraceMatrix:
    rng = np.random.default_rng(seed)
    return traces.subset(rng.permutation(traces.n_traces))


def split_indices(traces: TraceMatrix, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified (by key byte) train/test row indices, each sorted ascending.

    Every class contributes floor or ceil of count * train_fraction rows to the
    training part; the total is round(M * train_fraction).
    """
    m = traces.n_traces
    if m == 0:
        raise EmptyInputError("cannot split an empty trace set")
    rng = np.random.default_rng(spec.seed)
    f = spec.train_fraction

    classes = np.unique(traces.key_bytes)
    members = [rng.permutation(np.flatnonzero(traces.key_bytes == c)) for c in classes]
    counts = np.array([len(mem) for mem in members])
    exact = counts * f
    n_train = np.floor(exact).astype(np.int64)
    remaining = int(round(m * f)) - int(n_train.sum())
    if remaining > 0:
        # largest remainders first, ties by class order
        order = np.argsort(-(exact - n_train), kind="stable")
        n_train[order[:remaining]] += 1

    train_idx = np.sort(np.concatenate([mem[:k] for mem, k in zip(members, n_train)]))
    test_idx = np.sort(np.concatenate([mem[k:] for mem, k in zip(members, n_train)]))
    if train_idx.size == 0 or test_idx.size == 0:
        raise InsufficientDataError(
            f"split of {m} traces at fraction {f} leaves an empty partition"
        )
    return train_idx, test_idx


def split(traces: TraceMatrix, spec: SplitSpec) -> Tuple[TraceMatrix, TraceMatrix]:
    train_idx, test_idx = split_indices(traces, spec)
    return traces.subset(train_idx), traces.subset(test_idx)
