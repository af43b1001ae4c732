from dataclasses import dataclass

import numpy as np

from scaf.data.traces import TraceMatrix
from scaf.errors import InsufficientClassesError, RangeError


@dataclass(frozen=True, eq=False)
class PoiSet:
    """Points of interest, highest difference-of-means score first."""

    indices: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def class_means(traces: TraceMatrix) -> tuple:
    """(sorted class labels, per-class mean traces)."""
    classes, inverse = np.unique(traces.key_bytes, return_inverse=True)
    sums = np.zeros((classes.size, traces.trace_length))
    np.add.at(sums, inverse, traces.samples)
    counts = np.bincount(inverse, minlength=classes.size)
    return classes, sums / counts[:, None]


def dom_scores(traces: TraceMatrix) -> np.ndarray:
    """Per sample, the sum over unordered class pairs of |mean_a - mean_b|."""
    classes, means = class_means(traces)
    if classes.size < 2:
        raise InsufficientClassesError(
            f"difference of means needs >= 2 key classes, got {classes.size}"
        )
    # sum_{i<j} |x_(j) - x_(i)| = sum_i x_(i) * (2i - n + 1) over the sorted column
    ordered = np.sort(means, axis=0)
    n = ordered.shape[0]
    weights = 2.0 * np.arange(n) - n + 1.0
    return weights @ ordered


def dom_poi(traces: TraceMatrix, n_poi: int = 2) -> PoiSet:
    """The n_poi samples with the largest DOM score; ties go to the lower index."""
    if not 1 <= n_poi <= traces.trace_length:
        raise RangeError(f"n_poi must be in [1, {traces.trace_length}], got {n_poi}")
    scores = dom_scores(traces)
    order = np.argsort(-scores, kind="stable")[:n_poi]
    return PoiSet(indices=order, scores=scores[order])
