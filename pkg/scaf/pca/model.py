"""Principal component analysis of trace sets.

fit() mean-adjusts the traces, eigendecomposes their (unbiased) covariance
and keeps the p leading unit eigenvectors; project() maps traces onto them::

    Traces_m = (V_m' x Traces_adjust')'
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Tuple, TypeVar, Union

import numpy as np

from scaf.data.traces import TraceMatrix, as_samples
from scaf.errors import DimensionError, InsufficientDataError, RangeError, TraceFormatError
from scaf.utils.progress import progress

PCA_MAGIC = b"SCAP"
_HEADER = struct.Struct("<4sII")

SetLike = TypeVar("SetLike", TraceMatrix, np.ndarray)


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (N,)
    components: np.ndarray  # (N, p), unit columns
    eigenvalues: np.ndarray  # (p,), nonincreasing

    @property
    def n_features(self) -> int:
        return int(self.components.shape[0])

    @property
    def n_components(self) -> int:
        return int(self.components.shape[1])


@dataclass(frozen=True)
class ExplainedVariance:
    fractions: np.ndarray
    # False when the model keeps fewer than N components
    of_total: bool


def _wrap(original: SetLike, samples: np.ndarray) -> SetLike:
    if isinstance(original, TraceMatrix):
        return original.with_samples(samples)
    return samples


def mean_adjust(traces: SetLike) -> Tuple[SetLike, np.ndarray]:
    """Subtract the per-sample mean; returns the adjusted set and the mean vector."""
    x = as_samples(traces)
    if x.shape[0] < 2:
        raise InsufficientDataError(f"mean adjustment needs M >= 2 traces, got {x.shape[0]}")
    mean = x.mean(axis=0)
    return _wrap(traces, x - mean), mean


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit(
    traces: Union[TraceMatrix, np.ndarray],
    p: Optional[int] = None,
    method: Literal["svd", "covariance"] = "svd",
) -> PcaModel:
    """Fit a PCA model keeping ``p`` components (all N when omitted).

    The default SVD route uses singular values of the mean-adjusted matrix
    (lambda = s^2 / (M - 1)); the covariance route eigendecomposes the
    covariance matrix directly.
    """
    x = as_samples(traces)
    m, n = x.shape
    if p is None:
        p = n
    if not 1 <= p <= n:
        raise RangeError(f"number of components must be in [1, {n}], got {p}")
    adjusted, mean = mean_adjust(x)
    progress.update_status("pca", f"{m}x{n}", f"fitting {p} components")

    if method == "svd":
        full = p > min(m, n)
        _, s, vt = np.linalg.svd(adjusted, full_matrices=full)
        eig = np.zeros(vt.shape[0])
        eig[: s.size] = s**2 / (m - 1)
        vectors = vt.T
    elif method == "covariance":
        cov = np.atleast_2d(np.cov(adjusted, rowvar=False))
        w, v = np.linalg.eigh(cov)
        order = np.argsort(-w, kind="stable")
        eig, vectors = w[order], v[:, order]
    else:
        raise RangeError(f"unknown PCA method {method!r}")

    eig = np.maximum(eig[:p], 0.0)
    vectors = _fix_signs(vectors[:, :p])
    progress.update_status("pca", None, "Done")
    return PcaModel(mean=mean, components=np.ascontiguousarray(vectors), eigenvalues=eig)


def project(model: PcaModel, traces: SetLike) -> SetLike:
    """Project traces onto the model's components (mean taken from the model)."""
    x = as_samples(traces)
    if x.shape[1] != model.n_features:
        raise DimensionError(
            f"model expects {model.n_features} samples per trace, got {x.shape[1]}"
        )
    return _wrap(traces, (x - model.mean) @ model.components)


def reconstruct(model: PcaModel, projected: np.ndarray, add_mean: bool = False) -> np.ndarray:
    """Map projected coordinates back to (mean-adjusted) sample space."""
    z = as_samples(projected)
    if z.shape[1] != model.n_components:
        raise DimensionError(f"expected {model.n_components} coordinates, got {z.shape[1]}")
    x = z @ model.components.T
    return x + model.mean if add_mean else x


def explained_variance(model: PcaModel) -> ExplainedVariance:
    """Fraction of variance per component.

    Fractions are of the total variance when the model keeps all N components,
    otherwise of the retained variance only.
    """
    total = float(model.eigenvalues.sum())
    if total <= 0.0:
        fractions = np.zeros_like(model.eigenvalues)
    else:
        fractions = model.eigenvalues / total
    return ExplainedVariance(fractions=fractions, of_total=model.n_components == model.n_features)


##### SCAP container #####


def pca_to_bytes(model: PcaModel) -> bytes:
    n, p = model.n_features, model.n_components
    return b"".join(
        [
            _HEADER.pack(PCA_MAGIC, n, p),
            model.mean.astype("<f8").tobytes(),
            model.eigenvalues.astype("<f8").tobytes(),
            np.ascontiguousarray(model.components, dtype="<f8").tobytes(),
        ]
    )


def pca_from_bytes(data: bytes, source: str = "<bytes>") -> PcaModel:
    if len(data) < _HEADER.size:
        raise TraceFormatError(f"{source}: too short for a SCAP header")
    magic, n, p = _HEADER.unpack_from(data, 0)
    if magic != PCA_MAGIC:
        raise TraceFormatError(f"{source}: bad magic {magic!r}, expected {PCA_MAGIC!r}")
    expected = _HEADER.size + 8 * (n + p + n * p)
    if len(data) != expected:
        raise TraceFormatError(f"{source}: expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return PcaModel(
        mean=body[:n].astype(np.float64),
        eigenvalues=body[n : n + p].astype(np.float64),
        components=body[n + p :].reshape(n, p).astype(np.float64),
    )


def save_pca(path: Union[str, Path], model: PcaModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pca_to_bytes(model))
    return path


def load_pca(path: Union[str, Path]) -> PcaModel:
    path = Path(path)
    return pca_from_bytes(path.read_bytes(), source=str(path))
