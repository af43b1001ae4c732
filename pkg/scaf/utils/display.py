from colorama import Fore, Style
from tabulate import tabulate
from typing import Dict, Optional

import numpy as np
import pandas as pd

from scaf.data.models import TrainReport
from scaf.pipeline.methods import METHOD_ORDER
from scaf.pipeline.report import AttackReport


def _pct(value: float) -> str:
    if value is None or np.isnan(value):
        return f"{Fore.WHITE}N/A{Style.RESET_ALL}"
    return f"{value * 100:.2f}%"


def _accuracy_color(value: float) -> str:
    if value >= 0.9:
        return Fore.GREEN
    if value >= 0.5:
        return Fore.YELLOW
    return Fore.RED


def sort_reports(reports: Dict[str, AttackReport]) -> list:
    """Reports in method registry order."""
    order = {display: idx for idx, (display, _) in enumerate(METHOD_ORDER)}
    return sorted(reports.items(), key=lambda item: order.get(item[0], 999))


def print_train_report(report: TrainReport, every: int = 10) -> None:
    """Per-epoch loss and accuracies, every ``every``-th epoch plus the last."""
    print(f"\n{Fore.WHITE}{Style.BRIGHT}TRAINING:{Style.RESET_ALL}")
    rows = []
    n = len(report.train_loss)
    for epoch in range(n):
        if (epoch + 1) % every and epoch != n - 1:
            continue
        row = [
            f"{Fore.CYAN}{epoch + 1}{Style.RESET_ALL}",
            f"{report.train_loss[epoch]:.4f}",
            _pct(report.train_accuracy[epoch]),
        ]
        if report.val_accuracy:
            val = report.val_accuracy[epoch]
            row.append(f"{_accuracy_color(val)}{_pct(val)}{Style.RESET_ALL}")
        rows.append(row)
    headers = [f"{Fore.WHITE}Epoch", "Loss", "Train Acc"]
    if report.val_accuracy:
        headers.append("Val Acc")
    print(tabulate(rows, headers=headers, tablefmt="grid", colalign=("right",) * len(headers)))
    if report.initial_loss is not None:
        print(f"Initial loss: {Fore.CYAN}{report.initial_loss:.4f}{Style.RESET_ALL}")
    print(f"Wall time: {Fore.YELLOW}{report.wall_time:.1f}s{Style.RESET_ALL}")


def print_ranked_keys(ranking: pd.DataFrame, true_key: Optional[int] = None, top: int = 10) -> None:
    """Top key guesses of a CPA (columns guess, score, sample)."""
    print(f"\n{Fore.WHITE}{Style.BRIGHT}KEY RANKING:{Style.RESET_ALL}")
    rows = []
    for rank, row in enumerate(ranking.head(top).itertuples(index=False), start=1):
        color = Fore.GREEN if true_key is not None and row.guess == true_key else Fore.WHITE
        rows.append(
            [
                rank,
                f"{color}0x{int(row.guess):02X}{Style.RESET_ALL}",
                f"{color}{row.score:.4f}{Style.RESET_ALL}",
                int(row.sample),
            ]
        )
    print(
        tabulate(
            rows,
            headers=[f"{Fore.WHITE}Rank", "Guess", "|rho|", "Sample"],
            tablefmt="grid",
            colalign=("right", "center", "right", "right"),
        )
    )


def print_attack_report(report: AttackReport) -> None:
    """Accuracy matrix (training cells dimmed) followed by the avg/max/min summary."""
    print(
        f"\n{Fore.WHITE}{Style.BRIGHT}CROSS-DEVICE ACCURACY:{Style.RESET_ALL} "
        f"[{Fore.CYAN}{report.method.value}{Style.RESET_ALL}, j={report.n_train_devices}]"
    )
    rows = []
    for g, group in enumerate(report.groups):
        row = [f"{Fore.CYAN}G{group.index}{Style.RESET_ALL}"]
        for d in range(len(report.devices)):
            value = report.accuracy[g, d]
            if report.excluded[g, d]:
                row.append(f"{Style.DIM}{_pct(value)}{Style.RESET_ALL}")
            else:
                row.append(f"{_accuracy_color(value)}{_pct(value)}{Style.RESET_ALL}")
        rows.append(row)
    headers = [f"{Fore.WHITE}Group"] + [f"D{dev}" for dev in report.devices]
    print(tabulate(rows, headers=headers, tablefmt="grid"))

    summary = [
        ["Average", _pct(report.average)],
        ["Maximum", _pct(report.maximum)],
        ["Minimum", _pct(report.minimum)],
        ["Cells", report.n_summary_cells],
    ]
    print(f"\n{Fore.WHITE}{Style.BRIGHT}SUMMARY{Style.RESET_ALL} (training devices excluded)")
    print(tabulate(summary, tablefmt="grid", colalign=("left", "right")))


def print_method_summaries(reports: Dict[str, AttackReport]) -> None:
    """One avg/max/min row per method."""
    rows = []
    for name, report in sort_reports(reports):
        rows.append(
            [
                f"{Fore.CYAN}{name}{Style.RESET_ALL}",
                report.n_train_devices,
                _pct(report.average),
                _pct(report.maximum),
                _pct(report.minimum),
            ]
        )
    print(
        tabulate(
            rows,
            headers=[f"{Fore.WHITE}Method", "j", "Avg", "Max", "Min"],
            tablefmt="grid",
            colalign=("left", "right", "right", "right", "right"),
        )
    )


def print_outlier_counts(table: pd.DataFrame, threshold: int = 0) -> None:
    """Device outlier counts; devices above ``threshold`` are shown in red."""
    print(f"\n{Fore.WHITE}{Style.BRIGHT}DEVICE OUTLIERS (3 sigma):{Style.RESET_ALL}")
    rows = []
    for row in table.itertuples(index=False):
        color = Fore.RED if row.outliers > threshold else Fore.GREEN
        rows.append(
            [
                f"{Fore.CYAN}D{row.device_id}{Style.RESET_ALL}",
                f"{color}{row.outliers}{Style.RESET_ALL}",
                f"{row.outliers / row.samples * 100:.1f}%",
            ]
        )
    print(
        tabulate(
            rows,
            headers=[f"{Fore.WHITE}Device", "Outliers", "Share"],
            tablefmt="grid",
            colalign=("left", "right", "right"),
        )
    )


def print_confusion(confusion: pd.DataFrame) -> None:
    """Confusion matrix; the diagonal is green, off-diagonal hits red."""
    print(f"\n{Fore.WHITE}{Style.BRIGHT}CONFUSION MATRIX:{Style.RESET_ALL}")
    rows = []
    for true_class, counts in confusion.iterrows():
        row = [f"{Fore.CYAN}{true_class}{Style.RESET_ALL}"]
        for predicted, count in counts.items():
            if count == 0:
                row.append("")
            elif predicted == true_class:
                row.append(f"{Fore.GREEN}{count}{Style.RESET_ALL}")
            else:
                row.append(f"{Fore.RED}{count}{Style.RESET_ALL}")
        rows.append(row)
    headers = [f"{Fore.WHITE}true \\ pred"] + [str(c) for c in confusion.columns]
    print(tabulate(rows, headers=headers, tablefmt="grid"))
