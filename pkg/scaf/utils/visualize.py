"""Figures written to files: accuracy heatmaps, template ellipses, per-device boxplots, PCA variance."""

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse as EllipsePatch  # noqa: E402

from scaf.attacks.templates import TemplateSet, template_ellipses  # noqa: E402
from scaf.data.traces import TraceMatrix  # noqa: E402
from scaf.pca.model import PcaModel, explained_variance  # noqa: E402
from scaf.pipeline.report import AttackReport  # noqa: E402


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_accuracy_heatmap(report: AttackReport, path: Union[str, Path]) -> Path:
    """Group x device accuracy heatmap; training cells are hatched."""
    fig, ax = plt.subplots(figsize=(max(6, len(report.devices) * 0.5), max(3, len(report.groups) * 0.5)))
    image = ax.imshow(report.accuracy * 100, vmin=0, vmax=100, cmap="viridis", aspect="auto")
    for g in range(len(report.groups)):
        for d in range(len(report.devices)):
            if report.excluded[g, d]:
                ax.add_patch(
                    plt.Rectangle((d - 0.5, g - 0.5), 1, 1, fill=False, hatch="//", edgecolor="white")
                )
    ax.set_xticks(range(len(report.devices)))
    ax.set_xticklabels([f"D{dev}" for dev in report.devices], rotation=90)
    ax.set_yticks(range(len(report.groups)))
    ax.set_yticklabels([f"G{g.index}" for g in report.groups])
    ax.set_xlabel("Test device")
    ax.set_ylabel("Training group")
    ax.set_title(f"{report.method.value} test accuracy, {report.n_train_devices} training device(s)")
    fig.colorbar(image, ax=ax, label="Accuracy (%)")
    return _save(fig, path)


def plot_template_ellipses(
    templates: TemplateSet,
    classes: Sequence[int],
    path: Union[str, Path],
    levels: Sequence[float] = (1.0, 2.0, 3.0),
) -> Path:
    """1/2/3-sigma contours of bivariate templates, one colour per class."""
    fig, ax = plt.subplots(figsize=(7, 6))
    colors = plt.cm.tab10(np.linspace(0, 1, max(len(classes), 1)))
    for color, key in zip(colors, classes):
        template = templates[key]
        for ellipse in template_ellipses(template, levels):
            ax.add_patch(
                EllipsePatch(
                    ellipse.center,
                    ellipse.width,
                    ellipse.height,
                    angle=ellipse.angle,
                    fill=False,
                    edgecolor=color,
                    linewidth=1.0 if ellipse.level > 1 else 1.8,
                )
            )
        ax.plot(*template.mean, "o", color=color, label=f"0x{key:02X}")
    ax.autoscale_view()
    ax.set_xlabel(f"Sample {templates.pois[0]}")
    ax.set_ylabel(f"Sample {templates.pois[1]}")
    ax.set_title("Template contours")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True)
    return _save(fig, path)


def plot_device_boxplot(traces: TraceMatrix, path: Union[str, Path]) -> Path:
    """Per-device distribution of sample amplitudes."""
    devices = traces.devices()
    data = [traces.samples[traces.device_ids == dev].ravel() for dev in devices]
    fig, ax = plt.subplots(figsize=(max(6, len(devices) * 0.4), 4))
    ax.boxplot(data, showfliers=False)
    ax.set_xticks(range(1, len(devices) + 1))
    ax.set_xticklabels([f"D{dev}" for dev in devices], rotation=90)
    ax.set_ylabel("Amplitude")
    ax.set_title("Power sample distribution per device")
    ax.grid(True, axis="y")
    return _save(fig, path)


def plot_explained_variance(model: PcaModel, path: Union[str, Path]) -> Path:
    """Per-component and cumulative explained variance."""
    ev = explained_variance(model)
    x = np.arange(1, ev.fractions.size + 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(x, ev.fractions * 100, color="blue", width=1.0)
    ax.plot(x, np.cumsum(ev.fractions) * 100, color="orange")
    ax.set_xlabel("Principal component")
    ax.set_ylabel("Variance (%)" if ev.of_total else "Retained variance (%)")
    ax.set_title("Explained variance")
    ax.grid(True)
    return _save(fig, path)
