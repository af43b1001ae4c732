"""Dynamic time warping and whole-set trace realignment.

The warp cost between X (length n) and Y (length w) is::

    L(X, Y) = min over paths of  sum_k |X(x(k)) - Y(y(k))| * c(k)  / (n + w)

with c(k) = (x(k) - x(k-1)) + (y(k) - y(k-1)) and x(0) = y(0) = 0, so the
boundary pair weighs 2, diagonal steps weigh 2 and single-axis steps weigh 1.
For equal lengths T the divisor is 2T.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numba as nb
import numpy as np

from scaf.data.traces import Trace, TraceMatrix, as_samples, as_trace
from scaf.errors import DimensionError, EmptyInputError, RangeError
from scaf.utils.progress import progress

jitkw = {
    "nopython": True,
    "nogil": True,
    "cache": False,
    "error_model": "numpy",
    # exact, order-fixed arithmetic so costs are reproducible
    "fastmath": False,
}

# step codes stored by the forward pass
_DIAG, _ADVANCE_X, _ADVANCE_Y = 0, 1, 2


@nb.jit(**jitkw)
def _accumulate(x, y, band):
    n = x.shape[0]
    w = y.shape[0]
    D = np.full((n, w), np.inf)
    step = np.zeros((n, w), dtype=np.int8)
    slope = (w - 1) / (n - 1) if n > 1 else 0.0
    banded = band >= 0 and n > 1 and w > 1
    for i in range(n):
        lo = 0
        hi = w - 1
        if banded:
            centre = i * slope
            lo = max(0, int(np.ceil(centre - band)))
            hi = min(w - 1, int(np.floor(centre + band)))
        for j in range(lo, hi + 1):
            d = abs(x[i] - y[j])
            if i == 0 and j == 0:
                D[0, 0] = 2.0 * d
                continue
            best = np.inf
            move = _DIAG
            if i > 0 and j > 0:
                best = D[i - 1, j - 1] + 2.0 * d
            if i > 0:
                c = D[i - 1, j] + d
                if c < best:
                    best = c
                    move = _ADVANCE_X
            if j > 0:
                c = D[i, j - 1] + d
                if c < best:
                    best = c
                    move = _ADVANCE_Y
            D[i, j] = best
            step[i, j] = move
    return D, step


@nb.jit(**jitkw)
def _traceback(step):
    n = step.shape[0]
    w = step.shape[1]
    px = np.empty(n + w - 1, dtype=np.int64)
    py = np.empty(n + w - 1, dtype=np.int64)
    i = n - 1
    j = w - 1
    k = 0
    while True:
        px[k] = i
        py[k] = j
        k += 1
        if i == 0 and j == 0:
            break
        m = step[i, j]
        if m == _DIAG:
            i -= 1
            j -= 1
        elif m == _ADVANCE_X:
            i -= 1
        else:
            j -= 1
    return px[:k][::-1].copy(), py[:k][::-1].copy()


@dataclass(frozen=True, eq=False)
class WarpPath:
    """Monotone warp path. ``x`` and ``y`` hold 0-based indices; ``pairs`` is 1-based."""

    x: np.ndarray
    y: np.ndarray
    cost: float

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(int(a) + 1, int(b) + 1) for a, b in zip(self.x, self.y)]


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    aligned: TraceMatrix
    modified_reference: Trace
    # width W_i after each iteration
    widths: np.ndarray

    @property
    def width(self) -> int:
        return int(self.modified_reference.shape[0])


def _normalize_band(band: Optional[int], n: int, w: int) -> int:
    if band is None:
        return -1
    if band < 0:
        raise RangeError(f"band must be >= 0, got {band}")
    # a slanted band narrower than one sample can disconnect unequal lengths
    return max(band, 1) if n != w else band


def warp_path(x: np.ndarray, y: np.ndarray, band: Optional[int] = None) -> WarpPath:
    """Optimal warp path for sequences of any (nonzero) lengths."""
    xs = np.ascontiguousarray(as_trace(x))
    ys = np.ascontiguousarray(as_trace(y))
    D, step = _accumulate(xs, ys, _normalize_band(band, xs.size, ys.size))
    total = D[-1, -1]
    if not np.isfinite(total):
        raise RangeError(f"band {band} leaves no admissible warp path")
    px, py = _traceback(step)
    return WarpPath(x=px, y=py, cost=float(total / (xs.size + ys.size)))


def dtw(x: np.ndarray, y: np.ndarray, band: Optional[int] = None) -> WarpPath:
    """Minimum-cost warp path between two traces of equal length T.

    Ties between equal-cost predecessors go to the diagonal, then to the step
    advancing x. ``band`` restricts the path to a Sakoe-Chiba band (off by default).
    """
    xs = np.asarray(x)
    ys = np.asarray(y)
    if xs.size == 0 or ys.size == 0:
        raise EmptyInputError("dtw needs nonempty traces")
    if xs.shape != ys.shape:
        raise DimensionError(f"dtw needs equal lengths, got {xs.shape} and {ys.shape}")
    return warp_path(xs, ys, band)


def realign_set(
    misaligned: TraceMatrix,
    reference: np.ndarray,
    band: Optional[int] = None,
) -> AlignmentResult:
    """Warp every trace onto a progressively stretched reference.

    Row i is warped against the reference as modified by rows 1..i-1. Its x
    indices re-index row i, its y indices re-index the reference and every
    previously aligned row, so after row i all rows seen so far share width W_i.

    Re-indexing earlier rows at every step is equivalent to composing the y
    index vectors once at the end, which is what is done here.
    """
    ref = as_trace(reference)
    m, n = misaligned.shape
    if ref.shape[0] != n:
        raise DimensionError(f"reference has {ref.shape[0]} samples, traces have {n}")

    xs: List[np.ndarray] = []
    ys: List[np.ndarray] = []
    widths = np.empty(m, dtype=np.int64)
    current = ref
    for i in range(m):
        path = warp_path(misaligned.samples[i], current, band)
        xs.append(path.x)
        ys.append(path.y)
        current = current[path.y]
        widths[i] = current.shape[0]
        if i % 100 == 0 or i == m - 1:
            progress.update_status("align", f"trace {i + 1}/{m}", f"width {widths[i]}")

    width = int(widths[-1])
    aligned = np.empty((m, width), dtype=np.float64)
    g = np.arange(width)
    for i in range(m - 1, -1, -1):
        aligned[i] = misaligned.samples[i][xs[i][g]]
        g = ys[i][g]
    modified = ref[g]
    progress.update_status("align", None, "Done")
    return AlignmentResult(
        aligned=misaligned.with_samples(aligned),
        modified_reference=modified,
        widths=widths,
    )


def warp_to_reference(trace: np.ndarray, reference: np.ndarray, band: Optional[int] = None) -> Trace:
    """Warp a trace onto a fixed reference, returning len(reference) samples.

    Each reference index takes the mean of the trace samples paired with it.
    """
    t = as_trace(trace)
    ref = as_trace(reference)
    path = warp_path(t, ref, band)
    sums = np.bincount(path.y, weights=t[path.x], minlength=ref.size)
    counts = np.bincount(path.y, minlength=ref.size)
    return sums / counts


def realign_rows(
    traces: TraceMatrix,
    reference: Union[AlignmentResult, np.ndarray],
    band: Optional[int] = None,
) -> TraceMatrix:
    """Warp every row of a set onto a persisted modified reference."""
    ref = reference.modified_reference if isinstance(reference, AlignmentResult) else as_trace(reference)
    out = np.empty((traces.n_traces, ref.shape[0]), dtype=np.float64)
    for i in range(traces.n_traces):
        out[i] = warp_to_reference(traces.samples[i], ref, band)
        if i % 100 == 0:
            progress.update_status("align", f"warp {i + 1}/{traces.n_traces}", "")
    return traces.with_samples(out)


def sample_rows(m: int, n_rows: int) -> np.ndarray:
    """``n_rows`` evenly spaced row indices out of ``m``, first and last included."""
    if n_rows < 1:
        raise RangeError(f"row count must be >= 1, got {n_rows}")
    if n_rows >= m:
        return np.arange(m)
    return np.unique(np.rint(np.linspace(0, m - 1, n_rows)).astype(np.int64))


def realign_sampled(
    misaligned: TraceMatrix,
    reference: np.ndarray,
    n_rows: Optional[int],
    band: Optional[int] = None,
) -> AlignmentResult:
    """Stretch the reference with ``n_rows`` evenly spaced rows, then warp the rest onto it.

    The reference width grows with every row realign_set processes, so the cost of
    a full pass is quadratic in the row count. Here only the sampled rows stretch
    the reference; every other row is warped onto the resulting modified reference
    with warp_to_reference. ``widths`` covers the sampled rows. ``None`` or a count
    of at least the number of rows realigns every row.
    """
    m = misaligned.n_traces
    if n_rows is None or n_rows >= m:
        return realign_set(misaligned, reference, band)

    picked = sample_rows(m, n_rows)
    fitted = realign_set(misaligned.subset(picked), reference, band)
    rest = np.setdiff1d(np.arange(m), picked, assume_unique=True)
    warped = realign_rows(misaligned.subset(rest), fitted, band)

    aligned = np.empty((m, fitted.width), dtype=np.float64)
    aligned[picked] = fitted.aligned.samples
    aligned[rest] = warped.samples
    progress.update_status("align", f"{len(picked)} sampled / {m}", f"width {fitted.width}")
    return AlignmentResult(
        aligned=misaligned.with_samples(aligned),
        modified_reference=fitted.modified_reference,
        widths=fitted.widths,
    )


def resample_rows(samples: np.ndarray, length: int) -> np.ndarray:
    """Linear-interpolation resampling of every row onto ``length`` points."""
    if length < 1:
        raise RangeError(f"resample length must be >= 1, got {length}")
    x = as_samples(samples)
    n = x.shape[1]
    if n == 0:
        raise EmptyInputError("cannot resample empty rows")
    if n == 1:
        return np.repeat(x, length, axis=1)
    pos = np.linspace(0.0, n - 1, length)
    i0 = np.floor(pos).astype(np.int64)
    np.clip(i0, 0, n - 1, out=i0)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    return x[:, i0] * (1.0 - frac) + x[:, i1] * frac


def resample_to_length(trace: np.ndarray, length: int) -> Trace:
    """Resample one trace onto ``length`` uniformly spaced points; endpoints kept."""
    t = as_trace(trace)
    return resample_rows(t[None, :], length)[0]
