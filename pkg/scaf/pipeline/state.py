from typing import Any, Dict, List, Optional, TypedDict

from scaf.align.dtw import AlignmentResult
from scaf.data.models import DeviceGroup, PipelineConfig, TrainReport
from scaf.data.traces import TraceMatrix
from scaf.nn.network import Network
from scaf.pca.model import PcaModel


def merge_dicts(a: Dict[str, Any], b: Dict[str, Any]) -> Dict[str, Any]:
    return {**a, **b}


class PipelineState(TypedDict, total=False):
    """Everything the stages of one group run read and write."""

    config: PipelineConfig
    group: DeviceGroup
    dataset: TraceMatrix

    # per-device train parts of the training group, keyed by device id
    train_parts: Dict[int, TraceMatrix]
    train_set: TraceMatrix
    val_set: TraceMatrix
    # held-out part of every device in the dataset
    test_sets: Dict[int, TraceMatrix]

    alignment: Optional[AlignmentResult]
    resample_length: Optional[int]
    pca: Optional[PcaModel]
    model: Network
    train_report: TrainReport

    accuracies: Dict[int, float]
    timings: Dict[str, float]
    completed: List[str]
