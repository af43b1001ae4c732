"""Self-contained attack model files ("SCAN").

Layout, little-endian::

    magic       4 bytes  b"SCAN"
    version     u16      1
    desc_len    u32      length of the JSON descriptor
    descriptor  desc_len bytes of UTF-8 JSON (ModelDescriptor)
    tensors     float64, row-major, in descriptor order
    pca         embedded SCAP blob (pca_bytes long, optional)
    reference   DTW modified reference, reference_length float64 (optional)
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from scaf.data.models import Architecture
from scaf.errors import TraceFormatError
from scaf.nn.network import CnnSpec, MlpSpec, Network, build_model
from scaf.pca.model import PcaModel, pca_from_bytes, pca_to_bytes

MODEL_MAGIC = b"SCAN"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sHI")


class TensorInfo(BaseModel):
    name: str
    shape: List[int]


class ModelDescriptor(BaseModel):
    architecture: Architecture
    mlp: Optional[MlpSpec] = None
    cnn: Optional[CnnSpec] = None
    seed: int = 0
    tensors: List[TensorInfo]
    pca_bytes: int = 0
    reference_length: int = 0
    # width realigned traces are resampled to before PCA / classification
    resample_length: Optional[int] = None


@dataclass
class AttackModel:
    """A classifier plus the preprocessing it was trained behind."""

    network: Network
    pca: Optional[PcaModel] = None
    reference: Optional[np.ndarray] = None
    resample_length: Optional[int] = None


def save_model(
    path: Union[str, Path],
    model: Network,
    pca: Optional[PcaModel] = None,
    reference: Optional[np.ndarray] = None,
    resample_length: Optional[int] = None,
) -> Path:
    tensors = model.state_tensors()
    pca_blob = pca_to_bytes(pca) if pca is not None else b""
    ref = np.asarray(reference, dtype="<f8") if reference is not None else np.empty(0, dtype="<f8")
    descriptor = ModelDescriptor(
        architecture=model.architecture,
        mlp=model.spec if isinstance(model.spec, MlpSpec) else None,
        cnn=model.spec if isinstance(model.spec, CnnSpec) else None,
        seed=model.seed,
        tensors=[TensorInfo(name=name, shape=list(t.shape)) for name, t in tensors],
        pca_bytes=len(pca_blob),
        reference_length=int(ref.size),
        resample_length=resample_length,
    )
    desc = descriptor.model_dump_json().encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(desc)))
        f.write(desc)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
        f.write(pca_blob)
        f.write(ref.tobytes())
    return path


def load_model(path: Union[str, Path]) -> AttackModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TraceFormatError(f"{path}: too short for a SCAN header")
    magic, version, desc_len = _HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise TraceFormatError(f"{path}: unsupported model version {version}")
    offset = _HEADER.size
    try:
        descriptor = ModelDescriptor.model_validate_json(data[offset : offset + desc_len])
    except (ValueError, ValidationError) as e:
        raise TraceFormatError(f"{path}: unreadable model descriptor: {e}") from e
    offset += desc_len

    values = {}
    for info in descriptor.tensors:
        count = int(np.prod(info.shape)) if info.shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise TraceFormatError(f"{path}: truncated tensor {info.name}")
        values[info.name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(info.shape)
        offset = end

    pca = None
    if descriptor.pca_bytes:
        pca = pca_from_bytes(data[offset : offset + descriptor.pca_bytes], source=str(path))
        offset += descriptor.pca_bytes
    reference = None
    if descriptor.reference_length:
        end = offset + 8 * descriptor.reference_length
        if end > len(data):
            raise TraceFormatError(f"{path}: truncated reference trace")
        reference = np.frombuffer(data, dtype="<f8", count=descriptor.reference_length, offset=offset).astype(np.float64)
        offset = end
    if offset != len(data):
        raise TraceFormatError(f"{path}: {len(data) - offset} trailing bytes")

    spec = descriptor.mlp if descriptor.architecture == Architecture.MLP else descriptor.cnn
    if spec is None:
        raise TraceFormatError(f"{path}: descriptor lacks the {descriptor.architecture.value} spec")
    network = build_model(spec, descriptor.seed)
    network.load_state(values)
    return AttackModel(
        network=network,
        pca=pca,
        reference=reference,
        resample_length=descriptor.resample_length,
    )
