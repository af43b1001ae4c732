from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator


class LeakageModel(str, Enum):
    """How the key-dependent value leaks into a synthetic trace"""

    HW = "hw"
    BITS = "bits"


class Architecture(str, Enum):
    """Classifier architectures"""

    MLP = "mlp"
    CNN = "cnn"


class Method(str, Enum):
    """Attack methods compared by the pipeline"""

    MLP = "MLP"
    PCA_MLP = "PCA-MLP"
    CNN = "CNN"
    DTW_CNN = "DTW-CNN"
    DTW_PCA_CNN = "DTW-PCA-CNN"
    DTW_PCA_MLP = "DTW-PCA-MLP"


class GroupMode(str, Enum):
    """How training device groups are formed"""

    FORMULA = "formula"
    LEAVE_ONE_OUT = "leave_one_out"


class TraceLabel(BaseModel):
    key_byte: int = Field(ge=0, le=255)
    plaintext_byte: int = Field(ge=0, le=255)
    device_id: int = Field(ge=1, le=0xFFFF)


class SplitSpec(BaseModel):
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)


class DeviceProfile(BaseModel):
    device_id: int = Field(ge=1, le=0xFFFF)
    gain: float = Field(default=1.0, gt=0.0)
    offset: float = 0.0
    noise_sigma: float = Field(default=0.0, ge=0.0)
    leak_positions: List[int] = Field(default_factory=lambda: [96, 148])
    leak_strength: float = Field(default=1.0, gt=0.0)
    batch_id: int = 0
    drift_sigma: float = Field(default=0.0, ge=0.0)

    @field_validator("leak_positions")
    @classmethod
    def _non_negative_positions(cls, positions: List[int]) -> List[int]:
        if not positions:
            raise ValueError("leak_positions must not be empty")
        if any(p < 0 for p in positions):
            raise ValueError(f"leak_positions must be >= 0, got {positions}")
        return positions


class SynthConfig(BaseModel):
    n_traces_per_device: int = Field(default=10000, ge=1)
    trace_length: int = Field(default=3000, ge=1)
    devices: List[DeviceProfile]
    fixed_plaintext_byte: int = Field(default=0x00, ge=0, le=255)
    random_plaintext: bool = False
    fixed_key_byte: Optional[int] = Field(default=None, ge=0, le=255)
    leakage_model: LeakageModel = LeakageModel.HW
    # Key-independent waveform; amplitude 0 gives an all-zero background
    background_amplitude: float = Field(default=10.0, ge=0.0)
    background_period: int = Field(default=4, ge=2)
    seed: int = Field(default=0, ge=0)


class TrainConfig(BaseModel):
    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=100, ge=1)
    l2_lambda: float = Field(default=1e-4, ge=0.0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    seed: int = Field(default=0, ge=0)
    shuffle: bool = True
    augment_copies: int = Field(default=0, ge=0)
    augment_sigma: float = Field(default=0.0, ge=0.0)

    @classmethod
    def for_architecture(cls, arch: Architecture, **overrides) -> "TrainConfig":
        """Defaults per architecture: 100 epochs for the MLP, 20 for the CNN."""
        epochs = 20 if Architecture(arch) == Architecture.CNN else 100
        return cls(**{"epochs": epochs, **overrides})


class TrainReport(BaseModel):
    train_loss: List[float] = Field(default_factory=list)
    train_accuracy: List[float] = Field(default_factory=list)
    val_accuracy: List[float] = Field(default_factory=list)
    initial_loss: Optional[float] = None
    wall_time: float = 0.0


class DeviceGroup(BaseModel):
    index: int = Field(ge=1)
    members: List[int]


class PipelineConfig(BaseModel):
    method: Method = Method.PCA_MLP
    n_train_devices: int = Field(default=1, ge=1)
    group_mode: GroupMode = GroupMode.FORMULA
    group_index: Optional[int] = Field(default=None, ge=1)
    train_devices: Optional[List[int]] = None
    dataset: Optional[Path] = None
    split: SplitSpec = Field(default_factory=SplitSpec)

    # Rigid misalignment injected after loading (0 disables)
    max_shift: int = Field(default=0, ge=0)
    misalign_seed: int = Field(default=0, ge=0)

    # None keeps every component, which suits desk-scale trace lengths. Full-length
    # 3000-sample traces are usually cut to 600
    pca_components: Optional[int] = Field(default=None, ge=1)
    dtw_reference_index: int = Field(default=0, ge=0)
    dtw_band: Optional[int] = Field(default=None, ge=0)
    # Training rows that stretch the reference; the others are warped onto it. None uses every row
    dtw_sample_rows: Optional[int] = Field(default=32, ge=1)
    # None resamples realigned traces back to the original trace length
    resample_length: Optional[int] = Field(default=None, ge=1)

    mlp_hidden_units: List[int] = Field(default_factory=lambda: [100, 100])
    mlp_dropout: float = Field(default=0.10, ge=0.0, lt=1.0)
    cnn_filters: int = Field(default=70, ge=1)
    cnn_kernel: int = Field(default=60, ge=1)
    cnn_pool: int = Field(default=3, ge=1)
    cnn_fc_units: int = Field(default=150, ge=1)
    cnn_flatten_dropout: float = Field(default=0.20, ge=0.0, lt=1.0)
    cnn_fc_dropout: float = Field(default=0.10, ge=0.0, lt=1.0)

    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: Path = Path("reports")
    deterministic: bool = True
