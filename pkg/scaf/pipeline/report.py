"""Cross-device accuracy reports and their CSV files."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from scaf.data.models import DeviceGroup, Method

SUMMARY_COLUMNS = ["method", "n_train_devices", "avg", "max", "min"]


@dataclass
class AttackReport:
    """Accuracy of every trained group on every device's held-out traces.

    ``accuracy[g, d]`` is measured for every cell; cells where device d was in
    group g's training set are flagged in ``excluded`` and never enter the
    cross-device summary.
    """

    method: Method
    n_train_devices: int
    groups: List[DeviceGroup]
    devices: List[int]
    accuracy: np.ndarray
    excluded: np.ndarray
    train_seconds: List[float] = field(default_factory=list)
    predict_seconds: List[float] = field(default_factory=list)
    deterministic: bool = True

    def __post_init__(self) -> None:
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        self.excluded = np.asarray(self.excluded, dtype=bool)
        expected = (len(self.groups), len(self.devices))
        if self.accuracy.shape != expected or self.excluded.shape != expected:
            raise ValueError(
                f"accuracy {self.accuracy.shape} / excluded {self.excluded.shape}, expected {expected}"
            )

    @property
    def cross_device(self) -> np.ndarray:
        """Accuracies of cells that count toward the summary."""
        return self.accuracy[~self.excluded]

    @property
    def n_summary_cells(self) -> int:
        return int((~self.excluded).sum())

    @property
    def average(self) -> float:
        cells = self.cross_device
        return float(cells.mean()) if cells.size else float("nan")

    @property
    def maximum(self) -> float:
        cells = self.cross_device
        return float(cells.max()) if cells.size else float("nan")

    @property
    def minimum(self) -> float:
        cells = self.cross_device
        return float(cells.min()) if cells.size else float("nan")

    def same_device_accuracy(self) -> Dict[int, float]:
        """Mean accuracy of each device over the groups that trained on it."""
        out = {}
        for d, dev in enumerate(self.devices):
            cells = self.accuracy[self.excluded[:, d], d]
            if cells.size:
                out[dev] = float(cells.mean())
        return out

    def matrix_frame(self) -> pd.DataFrame:
        """Group x device matrix; training cells are NaN."""
        masked = np.where(self.excluded, np.nan, self.accuracy)
        return pd.DataFrame(
            masked,
            index=pd.Index([g.index for g in self.groups], name="group"),
            columns=[f"D{dev}" for dev in self.devices],
        )

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[Method(self.method).value, self.n_train_devices, self.average, self.maximum, self.minimum]],
            columns=SUMMARY_COLUMNS,
        )

    def plot_frame(self) -> pd.DataFrame:
        """One row per (group, device) cell, training cells included and flagged."""
        rows = []
        for g, group in enumerate(self.groups):
            for d, dev in enumerate(self.devices):
                rows.append(
                    {
                        "group": group.index,
                        "device": dev,
                        "accuracy": self.accuracy[g, d],
                        "training_device": bool(self.excluded[g, d]),
                    }
                )
        return pd.DataFrame(rows)

    def timing_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "group": [g.index for g in self.groups],
                "train_seconds": self.train_seconds,
                "predict_seconds": self.predict_seconds,
            }
        )


def _write_csv(frame: pd.DataFrame, path: Path, index: bool) -> None:
    try:
        frame.to_csv(path, index=index, na_rep="")
    except OSError as e:
        raise OSError(e.errno, f"report_emit: cannot write {path}: {e.strerror or e}") from e


def report_emit(report: AttackReport, path: Union[str, Path]) -> List[Path]:
    """Write the report's CSV files into directory ``path``.

    accuracy_matrix.csv, summary.csv and plot_data.csv are always written;
    timing.csv only when the report was not produced in deterministic mode.
    """
    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(e.errno, f"report_emit: cannot create {out_dir}: {e.strerror or e}") from e

    written = []
    files = [
        ("accuracy_matrix.csv", report.matrix_frame(), True),
        ("summary.csv", report.summary_frame(), False),
        ("plot_data.csv", report.plot_frame(), False),
    ]
    if not report.deterministic:
        files.append(("timing.csv", report.timing_frame(), False))
    for name, frame, index in files:
        target = out_dir / name
        _write_csv(frame, target, index)
        written.append(target)
    return written


def read_matrix(path: Union[str, Path]) -> pd.DataFrame:
    """Re-read an emitted accuracy_matrix.csv (empty cells come back as NaN)."""
    return pd.read_csv(path, index_col="group")
