"""MLP and 1-D CNN key-byte classifiers built from scaf.nn.layers."""

from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from scaf.data.models import Architecture
from scaf.data.traces import TraceMatrix, as_samples
from scaf.errors import ConfigurationError, DimensionError, RangeError
from scaf.nn.layers import (
    AddChannel,
    BatchNorm1d,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1D,
    ReLU,
    cross_entropy,
    softmax,
    softmax_cross_entropy_grad,
)

N_CLASSES = 256


class MlpSpec(BaseModel):
    """Dense -> BN -> ReLU blocks, dropout after the first block, softmax output."""

    input_dim: int = Field(ge=1)
    hidden_units: List[int] = Field(default_factory=lambda: [100, 100], min_length=1)
    dropout: float = Field(default=0.10, ge=0.0, lt=1.0)
    n_classes: int = Field(default=N_CLASSES, ge=2)


class CnnSpec(BaseModel):
    """conv -> ReLU -> conv -> ReLU -> maxpool -> flatten -> dropout -> FC -> BN -> ReLU -> dropout -> softmax."""

    input_length: int = Field(ge=1)
    filters: int = Field(default=70, ge=1)
    kernel: int = Field(default=60, ge=1)
    pool: int = Field(default=3, ge=1)
    fc_units: int = Field(default=150, ge=1)
    flatten_dropout: float = Field(default=0.20, ge=0.0, lt=1.0)
    fc_dropout: float = Field(default=0.10, ge=0.0, lt=1.0)
    n_classes: int = Field(default=N_CLASSES, ge=2)

    def pooled_length(self) -> int:
        return (self.input_length - 2 * (self.kernel - 1)) // self.pool


ArchSpec = Union[MlpSpec, CnnSpec]


class Network:
    """A sequential classifier ending in softmax over ``n_classes`` key-byte values."""

    architecture: Architecture

    def __init__(self, spec: ArchSpec, layers: List[Layer], seed: int = 0) -> None:
        self.spec = spec
        self.layers = layers
        self.seed = seed
        self._probs: Optional[np.ndarray] = None
        self._labels: Optional[np.ndarray] = None
        self.reseed(seed)

    @property
    def input_dim(self) -> int:
        raise NotImplementedError

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def reseed(self, seed: int) -> None:
        """Give every dropout layer its own generator derived from ``seed``."""
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng([seed, 1, i])

    ##### Forward / backward #####

    def _check_width(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"model expects batches of width {self.input_dim}, got shape {x.shape}"
            )
        return x

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = self._check_width(x)
        for layer in self.layers:
            out = layer.forward(out, training)
        return out

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Class probabilities, one row per trace."""
        probs = softmax(self.logits(x, training))
        self._probs = probs
        return probs

    def backward(self, labels: np.ndarray, l2_lambda: float = 0.0) -> Dict[str, np.ndarray]:
        """Gradients of mean cross-entropy + l2_lambda * sum ||W||^2 after a forward pass."""
        if self._probs is None:
            raise RuntimeError("backward() called before forward()")
        labels = np.asarray(labels, dtype=np.int64)
        grad = softmax_cross_entropy_grad(self._probs, labels)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

        grads: Dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for name, g in layer.grads.items():
                if name in layer.decayed and l2_lambda > 0.0:
                    g = g + 2.0 * l2_lambda * layer.params[name]
                grads[f"{i}.{name}"] = g
        return grads

    def l2_penalty(self, l2_lambda: float) -> float:
        if l2_lambda == 0.0:
            return 0.0
        total = 0.0
        for layer in self.layers:
            for name in layer.decayed:
                total += float(np.sum(layer.params[name] ** 2))
        return l2_lambda * total

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Trainable tensors keyed ``"<layer index>.<name>"`` (live references)."""
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def state_tensors(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters then buffers of every layer, in layer order."""
        out: List[Tuple[str, np.ndarray]] = []
        for i, layer in enumerate(self.layers):
            out.extend((f"{i}.{name}", p) for name, p in layer.params.items())
            out.extend((f"{i}.{name}", b) for name, b in layer.buffers.items())
        return out

    def load_state(self, tensors: Dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for name, current in store.items():
                    key = f"{i}.{name}"
                    if key not in tensors:
                        raise DimensionError(f"missing tensor {key}")
                    value = np.asarray(tensors[key], dtype=np.float64)
                    if value.shape != current.shape:
                        raise DimensionError(f"tensor {key}: shape {value.shape}, expected {current.shape}")
                    current[...] = value

    ##### Inference #####

    def predict_proba(self, data: Union[TraceMatrix, np.ndarray], batch_size: int = 4096) -> np.ndarray:
        x = as_samples(data)
        chunks = [self.forward(x[i : i + batch_size]) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(chunks, axis=0)

    def predict(self, data: Union[TraceMatrix, np.ndarray], batch_size: int = 4096) -> np.ndarray:
        return self.predict_proba(data, batch_size).argmax(axis=1)

    def accuracy(self, data: Union[TraceMatrix, np.ndarray], labels: Optional[np.ndarray] = None) -> float:
        if labels is None:
            if not isinstance(data, TraceMatrix):
                raise RangeError("labels are required when data is a plain array")
            labels = data.key_bytes
        return float(np.mean(self.predict(data) == np.asarray(labels)))

    def loss(self, data: Union[TraceMatrix, np.ndarray], labels: Optional[np.ndarray] = None) -> float:
        """Eval-mode mean cross-entropy (no L2 term)."""
        if labels is None:
            labels = data.key_bytes  # type: ignore[union-attr]
        return cross_entropy(self.predict_proba(data), np.asarray(labels))

    def summary(self) -> List[str]:
        return [layer.describe() for layer in self.layers]


class MlpModel(Network):
    architecture = Architecture.MLP

    def __init__(self, spec: MlpSpec, seed: int = 0) -> None:
        rng = np.random.default_rng([seed, 0])
        layers: List[Layer] = []
        width = spec.input_dim
        for k, units in enumerate(spec.hidden_units):
            layers += [Dense(width, units, rng), BatchNorm1d(units), ReLU()]
            if k == 0 and spec.dropout > 0.0:
                layers.append(Dropout(spec.dropout))
            width = units
        layers.append(Dense(width, spec.n_classes, zero_init=True))
        super().__init__(spec, layers, seed)

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim


class CnnModel(Network):
    architecture = Architecture.CNN

    def __init__(self, spec: CnnSpec, seed: int = 0) -> None:
        if spec.pooled_length() < 1:
            raise ConfigurationError(
                f"input length {spec.input_length} too short for two kernels of "
                f"{spec.kernel} and pooling by {spec.pool}"
            )
        rng = np.random.default_rng([seed, 0])
        flat = spec.pooled_length() * spec.filters
        layers: List[Layer] = [
            AddChannel(),
            Conv1D(1, spec.filters, spec.kernel, rng),
            ReLU(),
            Conv1D(spec.filters, spec.filters, spec.kernel, rng),
            ReLU(),
            MaxPool1D(spec.pool),
            Flatten(),
            Dropout(spec.flatten_dropout),
            Dense(flat, spec.fc_units, rng),
            BatchNorm1d(spec.fc_units),
            ReLU(),
            Dropout(spec.fc_dropout),
            Dense(spec.fc_units, spec.n_classes, zero_init=True),
        ]
        super().__init__(spec, layers, seed)

    @property
    def input_dim(self) -> int:
        return self.spec.input_length


def init_model(arch: Union[Architecture, str], input_dim: int, seed: int = 0, **overrides) -> Network:
    """Fresh model: He-uniform hidden weights, zero output layer, zero biases, BN scale 1 / shift 0."""
    arch = Architecture(arch)
    if input_dim < 1:
        raise RangeError(f"input_dim must be >= 1, got {input_dim}")
    if arch == Architecture.MLP:
        return MlpModel(MlpSpec(input_dim=input_dim, **overrides), seed)
    return CnnModel(CnnSpec(input_length=input_dim, **overrides), seed)


def build_model(spec: ArchSpec, seed: int = 0) -> Network:
    if isinstance(spec, MlpSpec):
        return MlpModel(spec, seed)
    return CnnModel(spec, seed)


def gradients(
    model: Network,
    batch: np.ndarray,
    labels: np.ndarray,
    l2_lambda: float = 0.0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Train-mode forward and backward pass; returns (regularized loss, gradients)."""
    probs = model.forward(batch, training=True)
    loss = cross_entropy(probs, labels) + model.l2_penalty(l2_lambda)
    return loss, model.backward(labels, l2_lambda)
