"""Per-device statistics: averaged traces, 3-sigma outlier counts, amplitude spread."""

from typing import Tuple

import numpy as np
import pandas as pd

from scaf.data.traces import TraceMatrix, as_samples
from scaf.errors import InsufficientDataError


def device_mean_traces(traces: TraceMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """(sorted device ids, one averaged trace per device)."""
    ids, inverse = np.unique(traces.device_ids, return_inverse=True)
    sums = np.zeros((ids.size, traces.trace_length))
    np.add.at(sums, inverse, traces.samples)
    counts = np.bincount(inverse, minlength=ids.size)
    return ids, sums / counts[:, None]


def outlier_count(mean_traces: np.ndarray, exclude_self: bool = False, n_sigma: float = 3.0) -> np.ndarray:
    """Per device, the number of samples outside mu +/- n_sigma * sigma across devices.

    mu and sigma (population std) are taken per sample over all device-averaged
    traces, or over every other device when ``exclude_self`` is set.
    """
    x = as_samples(mean_traces)
    d = x.shape[0]
    if d < 3:
        raise InsufficientDataError(f"outlier analysis needs >= 3 devices, got {d}")
    if not exclude_self:
        mu = x.mean(axis=0)
        sigma = x.std(axis=0)
        return (np.abs(x - mu) > n_sigma * sigma).sum(axis=1)

    counts = np.empty(d, dtype=np.int64)
    for i in range(d):
        others = np.delete(x, i, axis=0)
        mu = others.mean(axis=0)
        sigma = others.std(axis=0)
        counts[i] = int((np.abs(x[i] - mu) > n_sigma * sigma).sum())
    return counts


def device_outliers(traces: TraceMatrix, exclude_self: bool = False) -> pd.DataFrame:
    """Outlier counts per device id, as a table."""
    ids, means = device_mean_traces(traces)
    counts = outlier_count(means, exclude_self=exclude_self)
    return pd.DataFrame({"device_id": ids, "outliers": counts, "samples": traces.trace_length})


def device_summary(traces: TraceMatrix) -> pd.DataFrame:
    """Amplitude distribution per device: median, quartiles, IQR, mean and std."""
    rows = []
    for dev in traces.devices():
        values = traces.samples[traces.device_ids == dev].ravel()
        q1, median, q3 = np.percentile(values, [25, 50, 75])
        rows.append(
            {
                "device_id": dev,
                "median": median,
                "q1": q1,
                "q3": q3,
                "iqr": q3 - q1,
                "mean": values.mean(),
                "std": values.std(),
            }
        )
    return pd.DataFrame(rows)
