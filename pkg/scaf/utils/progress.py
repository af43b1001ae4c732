import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from rich.console import Console
from rich.live import Live
from rich.style import Style
from rich.table import Table
from rich.text import Text

console = Console()

# Stages in pipeline order; unknown stage names sort after these
STAGE_LABELS: Dict[str, str] = {
    "synth": "Synthesis",
    "split": "Split",
    "align": "DTW alignment",
    "pca": "PCA",
    "train": "Training",
    "evaluate": "Evaluation",
    "attack": "Attack",
}

DONE = "Done"
ERROR = "Error"


@dataclass
class StageRecord:
    target: Optional[str] = None
    status: str = ""
    started: float = field(default_factory=time.perf_counter)
    finished: Optional[float] = None

    @property
    def elapsed(self) -> float:
        end = self.finished if self.finished is not None else time.perf_counter()
        return end - self.started

    @property
    def failed(self) -> bool:
        return self.status == ERROR


class StageProgress:
    """Live table of pipeline stages: what each one works on, its status and its wall time.

    Updates are always recorded; the table only renders between start() and stop().
    """

    def __init__(self) -> None:
        self.stages: Dict[str, StageRecord] = {}
        self.live = Live(self._render(), console=console, refresh_per_second=4)
        self.started = False

    def start(self) -> None:
        if not self.started:
            self.live.start()
            self.started = True

    def stop(self) -> None:
        if self.started:
            self.live.update(self._render())
            self.live.stop()
            self.started = False

    def update_status(self, stage: str, target: Optional[str] = None, status: str = "") -> None:
        """Record progress of a stage. A stage reopened after Done restarts its clock."""
        record = self.stages.get(stage)
        if record is None or (record.finished is not None and status != DONE):
            record = self.stages[stage] = StageRecord()
        if target:
            record.target = target
        if status:
            record.status = status
            if status == DONE:
                record.finished = time.perf_counter()
        if self.started:
            self.live.update(self._render())

    def mark_failed(self) -> None:
        """Flag every unfinished stage as failed."""
        now = time.perf_counter()
        for record in self.stages.values():
            if record.finished is None:
                record.status = ERROR
                record.finished = now
        if self.started:
            self.live.update(self._render())

    def _render(self) -> Table:
        table = Table(box=None, padding=(0, 1), header_style=Style(bold=True))
        table.add_column("")
        table.add_column("Stage", min_width=14)
        table.add_column("Target", style=Style(color="cyan"))
        table.add_column("Status", min_width=30)
        table.add_column("Elapsed", justify="right")

        order = list(STAGE_LABELS)

        def sort_key(name: str):
            return (order.index(name) if name in order else len(order), name)

        for name in sorted(self.stages, key=sort_key):
            record = self.stages[name]
            if record.failed:
                style, symbol = Style(color="red", bold=True), "✗"
            elif record.finished is not None:
                style, symbol = Style(color="green", bold=True), "✓"
            else:
                style, symbol = Style(color="yellow"), "⋯"
            table.add_row(
                Text(symbol, style=style),
                Text(STAGE_LABELS.get(name, name.replace("_", " ").title()), style=Style(bold=True)),
                record.target or "",
                Text(record.status, style=style),
                f"{record.elapsed:.1f}s",
            )
        return table


progress = StageProgress()
