"""End-to-end profiled attack runs: one training group, or a whole group x device matrix."""

import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from scaf.align.dtw import realign_rows, realign_sampled, resample_rows
from scaf.attacks.groups import form_groups, leave_one_out_groups
from scaf.data.io import load_traces
from scaf.data.models import (
    Architecture,
    DeviceGroup,
    GroupMode,
    PipelineConfig,
    SplitSpec,
    TrainConfig,
)
from scaf.data.traces import TraceMatrix, filter_devices, merge, split
from scaf.errors import ConfigurationError
from scaf.nn.network import CnnSpec, Network, init_model
from scaf.nn.serialize import save_model
from scaf.nn.train import train
from scaf.pca.model import fit as fit_pca
from scaf.pca.model import project
from scaf.pipeline.methods import get_architecture, get_method_stages, uses_alignment, uses_pca
from scaf.pipeline.report import AttackReport
from scaf.pipeline.state import PipelineState, merge_dicts
from scaf.synth.generator import inject_misalignment
from scaf.utils.progress import progress

Stage = Callable[[PipelineState], Dict[str, Any]]

LIST_FIELDS = {"mlp_hidden_units", "train_devices"}
SPLIT_KEYS = {"train_fraction": "train_fraction", "split_seed": "seed"}


##### Configuration #####
def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """Build a PipelineConfig from a flat key=value file plus overrides.

    Keys are PipelineConfig field names, TrainConfig field names (routed into
    ``train``) and ``train_fraction`` / ``split_seed`` (routed into ``split``).
    List fields are comma-separated. Empty values keep the default; "none" clears an
    optional field.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        raw.update({k: v for k, v in dotenv_values(path).items() if v not in (None, "")})
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    top: Dict[str, Any] = {}
    train_fields: Dict[str, Any] = {}
    split_fields: Dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, str) and value.strip().lower() == "none":
            value = None
        if key in LIST_FIELDS and isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        if key in SPLIT_KEYS:
            split_fields[SPLIT_KEYS[key]] = value
        elif key in PipelineConfig.model_fields:
            top[key] = value
        elif key in TrainConfig.model_fields:
            train_fields[key] = value
        else:
            raise ConfigurationError(f"unknown pipeline config key: {key}")
    if train_fields:
        top["train"] = TrainConfig(**train_fields)
    if split_fields:
        top["split"] = SplitSpec(**split_fields)
    return PipelineConfig(**top)


def training_groups(cfg: PipelineConfig, devices: Sequence[int]) -> List[DeviceGroup]:
    """Every training group the config describes, in group-index order."""
    if cfg.train_devices:
        return [DeviceGroup(index=1, members=list(cfg.train_devices))]
    if cfg.group_mode == GroupMode.LEAVE_ONE_OUT:
        return leave_one_out_groups(devices)
    return form_groups(cfg.n_train_devices, len(devices), devices)


def select_group(cfg: PipelineConfig, devices: Sequence[int]) -> DeviceGroup:
    groups = training_groups(cfg, devices)
    index = cfg.group_index or 1
    if index > len(groups):
        raise ConfigurationError(f"group {index} requested, only {len(groups)} groups exist")
    return groups[index - 1]


def _input_width(cfg: PipelineConfig, trace_length: int) -> int:
    width = trace_length
    if uses_alignment(cfg.method) and cfg.resample_length:
        width = cfg.resample_length
    if uses_pca(cfg.method) and cfg.pca_components:
        width = cfg.pca_components
    return width


def validate_config(cfg: PipelineConfig, devices: Sequence[int], trace_length: int) -> None:
    """Reject a stage chain that cannot run on this dataset, before any compute."""
    devices = list(devices)
    if not devices:
        raise ConfigurationError("dataset holds no devices")

    if cfg.train_devices:
        if len(set(cfg.train_devices)) != len(cfg.train_devices):
            raise ConfigurationError(f"duplicate training devices: {cfg.train_devices}")
        missing = sorted(set(cfg.train_devices) - set(devices))
        if missing:
            raise ConfigurationError(f"training devices {missing} not in dataset (devices {devices})")
    elif cfg.group_mode == GroupMode.LEAVE_ONE_OUT:
        if len(devices) < 2:
            raise ConfigurationError("leave-one-out groups need at least 2 devices")
        if cfg.group_index is not None and cfg.group_index > len(devices):
            raise ConfigurationError(f"group {cfg.group_index} requested, only {len(devices)} groups exist")
    else:
        if cfg.n_train_devices > len(devices):
            raise ConfigurationError(
                f"{cfg.n_train_devices} training devices requested, dataset has {len(devices)}"
            )
        n_groups = len(devices) // cfg.n_train_devices
        if cfg.group_index is not None and cfg.group_index > n_groups:
            raise ConfigurationError(f"group {cfg.group_index} requested, only {n_groups} groups exist")

    if cfg.max_shift >= trace_length:
        raise ConfigurationError(f"max_shift {cfg.max_shift} must be below the trace length {trace_length}")

    if uses_pca(cfg.method) and cfg.pca_components:
        available = cfg.resample_length if uses_alignment(cfg.method) and cfg.resample_length else trace_length
        if cfg.pca_components > available:
            raise ConfigurationError(
                f"pca_components {cfg.pca_components} exceeds the {available} features available"
            )

    if get_architecture(cfg.method) == Architecture.CNN:
        spec = CnnSpec(input_length=_input_width(cfg, trace_length), **_arch_overrides(cfg, Architecture.CNN))
        if spec.pooled_length() < 1:
            raise ConfigurationError(
                f"{cfg.method.value}: input width {spec.input_length} is too short for "
                f"two kernel-{spec.kernel} convolutions and pool {spec.pool}"
            )


def _arch_overrides(cfg: PipelineConfig, arch: Architecture) -> Dict[str, Any]:
    if arch == Architecture.MLP:
        return {"hidden_units": list(cfg.mlp_hidden_units), "dropout": cfg.mlp_dropout}
    return {
        "filters": cfg.cnn_filters,
        "kernel": cfg.cnn_kernel,
        "pool": cfg.cnn_pool,
        "fc_units": cfg.cnn_fc_units,
        "flatten_dropout": cfg.cnn_flatten_dropout,
        "fc_dropout": cfg.cnn_fc_dropout,
    }


def _train_config(cfg: PipelineConfig, arch: Architecture) -> TrainConfig:
    """The configured TrainConfig, with the architecture's epoch default unless epochs was set."""
    if "epochs" in cfg.train.model_fields_set:
        return cfg.train
    return cfg.train.model_copy(update={"epochs": TrainConfig.for_architecture(arch).epochs})


##### Stages #####
def split_stage(state: PipelineState) -> Dict[str, Any]:
    """Per-device train/test split; training and validation data come from group members only."""
    cfg, group, dataset = state["config"], state["group"], state["dataset"]
    progress.update_status("split", f"group {group.index}", f"{len(group.members)} training devices")
    train_parts: Dict[int, TraceMatrix] = {}
    test_sets: Dict[int, TraceMatrix] = {}
    for dev in dataset.devices():
        train_part, test_part = split(filter_devices(dataset, [dev]), cfg.split)
        test_sets[dev] = test_part
        if dev in group.members:
            train_parts[dev] = train_part

    first = train_parts[group.members[0]]
    if uses_alignment(cfg.method) and cfg.dtw_reference_index >= first.n_traces:
        raise ConfigurationError(
            f"dtw_reference_index {cfg.dtw_reference_index} out of range: device "
            f"{group.members[0]} has {first.n_traces} training traces"
        )
    progress.update_status("split", None, "Done")
    return {
        "train_parts": train_parts,
        "train_set": merge([train_parts[d] for d in group.members]),
        "val_set": merge([test_sets[d] for d in group.members]),
        "test_sets": test_sets,
    }


def align_stage(state: PipelineState) -> Dict[str, Any]:
    """Realign the training set, warp every held-out set onto the modified reference, resample.

    Only ``dtw_sample_rows`` training rows stretch the reference; the rest are warped onto it.
    """
    cfg, group = state["config"], state["group"]
    reference = state["train_parts"][group.members[0]].samples[cfg.dtw_reference_index]
    alignment = realign_sampled(state["train_set"], reference, cfg.dtw_sample_rows, cfg.dtw_band)
    length = cfg.resample_length or state["dataset"].trace_length

    def resampled(traces: TraceMatrix) -> TraceMatrix:
        return traces.with_samples(resample_rows(traces.samples, length))

    test_sets = {
        dev: resampled(realign_rows(traces, alignment, cfg.dtw_band))
        for dev, traces in state["test_sets"].items()
    }
    progress.update_status("align", f"group {group.index}", f"width {alignment.width} -> {length}")
    return {
        "alignment": alignment,
        "resample_length": length,
        "train_set": resampled(alignment.aligned),
        "val_set": merge([test_sets[d] for d in group.members]),
        "test_sets": test_sets,
    }


def pca_stage(state: PipelineState) -> Dict[str, Any]:
    """Fit PCA on the merged training data only, then project everything with it."""
    cfg = state["config"]
    model = fit_pca(state["train_set"], cfg.pca_components)
    return {
        "pca": model,
        "train_set": project(model, state["train_set"]),
        "val_set": project(model, state["val_set"]),
        "test_sets": {dev: project(model, t) for dev, t in state["test_sets"].items()},
    }


def train_stage(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    arch = get_architecture(cfg.method)
    train_cfg = _train_config(cfg, arch)
    model = init_model(
        arch,
        state["train_set"].trace_length,
        seed=train_cfg.seed,
        **_arch_overrides(cfg, arch),
    )
    progress.update_status("train", f"group {state['group'].index}", cfg.method.value)
    started = time.perf_counter()
    report = train(model, state["train_set"], state["val_set"], train_cfg)
    return {
        "model": model,
        "train_report": report,
        "timings": merge_dicts(state.get("timings", {}), {"train": time.perf_counter() - started}),
    }


def evaluate_stage(state: PipelineState) -> Dict[str, Any]:
    model: Network = state["model"]
    started = time.perf_counter()
    accuracies = {}
    for dev, traces in sorted(state["test_sets"].items()):
        progress.update_status("evaluate", f"group {state['group'].index}", f"device {dev}")
        accuracies[dev] = model.accuracy(traces)
    progress.update_status("evaluate", None, "Done")
    return {
        "accuracies": accuracies,
        "timings": merge_dicts(state.get("timings", {}), {"predict": time.perf_counter() - started}),
    }


STAGES: Dict[str, Stage] = {
    "split": split_stage,
    "align": align_stage,
    "pca": pca_stage,
    "train": train_stage,
    "evaluate": evaluate_stage,
}


def create_workflow(method) -> List[Tuple[str, Stage]]:
    """The ordered stage chain of a method."""
    return [(name, STAGES[name]) for name in get_method_stages(method)]


##### Runs #####
def load_dataset(cfg: PipelineConfig, traces: Optional[TraceMatrix] = None) -> TraceMatrix:
    if traces is not None:
        return traces
    if cfg.dataset is None:
        raise ConfigurationError("no dataset given: set `dataset` or pass a trace set")
    return load_traces(cfg.dataset)


def prepare_dataset(cfg: PipelineConfig, dataset: TraceMatrix) -> TraceMatrix:
    """Apply the configured rigid misalignment (seeded, so every group sees the same set)."""
    if cfg.max_shift == 0:
        return dataset
    progress.update_status("synth", "misalign", f"max shift {cfg.max_shift}")
    return inject_misalignment(dataset, cfg.max_shift, np.random.default_rng(cfg.misalign_seed))


def run_group(cfg: PipelineConfig, dataset: TraceMatrix, group: DeviceGroup) -> PipelineState:
    """Run a method's stage chain for one training group and return the final state."""
    missing = sorted(set(group.members) - set(dataset.devices()))
    if missing:
        raise ConfigurationError(f"group {group.index}: devices {missing} not in dataset")
    state: PipelineState = {
        "config": cfg,
        "group": group,
        "dataset": dataset,
        "alignment": None,
        "resample_length": None,
        "pca": None,
        "timings": {},
        "completed": [],
    }
    for name, stage in create_workflow(cfg.method):
        state = merge_dicts(state, stage(state))  # type: ignore[assignment,arg-type]
        state["completed"] = [*state["completed"], name]
    return state


def save_attack_model(state: PipelineState, path: Union[str, Path]) -> Path:
    """Persist a run's classifier together with its PCA model and modified reference."""
    alignment = state.get("alignment")
    return save_model(
        path,
        state["model"],
        pca=state.get("pca"),
        reference=alignment.modified_reference if alignment is not None else None,
        resample_length=state.get("resample_length"),
    )


def _build_report(
    cfg: PipelineConfig,
    dataset: TraceMatrix,
    groups: List[DeviceGroup],
    model_path: Optional[Union[str, Path]] = None,
) -> AttackReport:
    devices = dataset.devices()
    accuracy = np.empty((len(groups), len(devices)))
    excluded = np.zeros((len(groups), len(devices)), dtype=bool)
    train_seconds, predict_seconds = [], []
    for g, group in enumerate(groups):
        state = run_group(cfg, dataset, group)
        for d, dev in enumerate(devices):
            accuracy[g, d] = state["accuracies"][dev]
            excluded[g, d] = dev in group.members
        train_seconds.append(state["timings"]["train"])
        predict_seconds.append(state["timings"]["predict"])
        if model_path is not None and len(groups) == 1:
            save_attack_model(state, model_path)

    return AttackReport(
        method=cfg.method,
        n_train_devices=len(groups[0].members),
        groups=groups,
        devices=devices,
        accuracy=accuracy,
        excluded=excluded,
        train_seconds=train_seconds,
        predict_seconds=predict_seconds,
        deterministic=cfg.deterministic,
    )


def run(
    cfg: PipelineConfig,
    traces: Optional[TraceMatrix] = None,
    model_path: Optional[Union[str, Path]] = None,
) -> AttackReport:
    """Train one group (``group_index`` or ``train_devices``) and test it on every device."""
    dataset = load_dataset(cfg, traces)
    validate_config(cfg, dataset.devices(), dataset.trace_length)
    group = select_group(cfg, dataset.devices())
    return _build_report(cfg, prepare_dataset(cfg, dataset), [group], model_path)


def cross_matrix(
    cfg: PipelineConfig,
    groups: Optional[Sequence[DeviceGroup]] = None,
    traces: Optional[TraceMatrix] = None,
) -> AttackReport:
    """One training run per group, each evaluated against every device."""
    dataset = load_dataset(cfg, traces)
    devices = dataset.devices()
    validate_config(cfg, devices, dataset.trace_length)
    groups = list(groups) if groups is not None else training_groups(cfg, devices)
    if not groups:
        raise ConfigurationError("no training groups to run")
    for group in groups:
        missing = sorted(set(group.members) - set(devices))
        if missing:
            raise ConfigurationError(f"group {group.index}: devices {missing} not in dataset")
    return _build_report(cfg, prepare_dataset(cfg, dataset), groups)
