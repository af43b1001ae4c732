"""Gaussian template attack over a handful of points of interest."""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import multivariate_normal

from scaf.attacks.dom import PoiSet
from scaf.data.traces import TraceMatrix
from scaf.errors import DimensionError, InsufficientDataError, NumericalError

# Diagonal loading relative to the squared RMS of the POI samples
REGULARIZATION = 1e-9


@dataclass(frozen=True, eq=False)
class GaussianTemplate:
    key_byte: int
    mean: np.ndarray  # (k,)
    cov: np.ndarray  # (k, k), regularized

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        try:
            rv = multivariate_normal(mean=self.mean, cov=self.cov, allow_singular=False)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"template {self.key_byte}: covariance not positive definite") from e
        return np.atleast_1d(rv.logpdf(x))


@dataclass(frozen=True, eq=False)
class TemplateSet:
    pois: np.ndarray
    templates: List[GaussianTemplate]

    @property
    def classes(self) -> np.ndarray:
        return np.array([t.key_byte for t in self.templates])

    def __getitem__(self, key_byte: int) -> GaussianTemplate:
        for t in self.templates:
            if t.key_byte == key_byte:
                return t
        raise KeyError(key_byte)

    def __len__(self) -> int:
        return len(self.templates)


def _poi_indices(pois: Union[PoiSet, Sequence[int]]) -> np.ndarray:
    return np.asarray(pois.indices if isinstance(pois, PoiSet) else pois, dtype=np.int64)


def fit_templates(
    traces: TraceMatrix,
    pois: Union[PoiSet, Sequence[int]],
    regularization: float = REGULARIZATION,
) -> TemplateSet:
    """Per key class: sample mean and unbiased covariance over the POI columns, plus delta*I.

    delta = regularization * RMS^2 of the POI samples (regularization itself when they are all zero).
    """
    idx = _poi_indices(pois)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= traces.trace_length:
        raise DimensionError(f"POIs {idx.tolist()} outside [0, {traces.trace_length})")
    x = traces.samples[:, idx]
    k = idx.size
    rms2 = float(np.mean(x**2))
    delta = regularization * rms2 if rms2 > 0 else regularization

    templates = []
    for c in np.unique(traces.key_bytes):
        rows = x[traces.key_bytes == c]
        if rows.shape[0] < k + 1:
            raise InsufficientDataError(
                f"key class {int(c)} has {rows.shape[0]} traces, templates over {k} POIs need {k + 1}"
            )
        cov = np.atleast_2d(np.cov(rows, rowvar=False)) + delta * np.eye(k)
        templates.append(GaussianTemplate(key_byte=int(c), mean=rows.mean(axis=0), cov=cov))
    return TemplateSet(pois=idx, templates=templates)


def _poi_vectors(templates: TemplateSet, data: Union[TraceMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(data, TraceMatrix):
        return data.samples[:, templates.pois]
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[1] != templates.pois.size:
        raise DimensionError(f"expected {templates.pois.size}-dimensional POI vectors, got {x.shape[1]}")
    return x


def template_log_likelihoods(templates: TemplateSet, data: Union[TraceMatrix, np.ndarray]) -> np.ndarray:
    """n x classes matrix of log-densities; columns follow ``templates.classes``.

    ``data`` is a trace set (POI columns are picked) or n POI vectors.
    """
    x = _poi_vectors(templates, data)
    return np.column_stack([t.log_pdf(x) for t in templates.templates])


def template_classify(templates: TemplateSet, data: Union[TraceMatrix, np.ndarray]) -> Union[int, np.ndarray]:
    """Maximum-likelihood key byte; ties go to the lowest class."""
    single = not isinstance(data, TraceMatrix) and np.ndim(data) == 1
    ll = template_log_likelihoods(templates, data)
    best = templates.classes[np.argmax(ll, axis=1)]
    return int(best[0]) if single else best


def template_accuracy(templates: TemplateSet, traces: TraceMatrix) -> float:
    return float(np.mean(template_classify(templates, traces) == traces.key_bytes))


def confusion_matrix(
    true_labels: np.ndarray,
    predicted: np.ndarray,
    classes: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """Counts with true class as rows and predicted class as columns."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if classes is None:
        classes = np.union1d(true_labels, predicted)
    classes = np.asarray(classes, dtype=np.int64)
    pos = {int(c): i for i, c in enumerate(classes)}
    counts = np.zeros((classes.size, classes.size), dtype=np.int64)
    for t, p in zip(true_labels, predicted):
        counts[pos[int(t)], pos[int(p)]] += 1
    frame = pd.DataFrame(counts, index=classes, columns=classes)
    frame.index.name = "true"
    frame.columns.name = "predicted"
    return frame


@dataclass(frozen=True)
class Ellipse:
    level: float
    center: tuple
    width: float
    height: float
    angle: float  # degrees, major axis from the x axis


def template_ellipses(template: GaussianTemplate, levels: Sequence[float] = (1.0, 2.0, 3.0)) -> List[Ellipse]:
    """Mahalanobis-distance contours of a bivariate template."""
    if template.mean.size != 2:
        raise DimensionError("ellipses are only defined for bivariate templates")
    w, v = np.linalg.eigh(template.cov)
    major = v[:, 1]
    angle = float(np.degrees(np.arctan2(major[1], major[0])))
    center = (float(template.mean[0]), float(template.mean[1]))
    return [
        Ellipse(
            level=float(level),
            center=center,
            width=float(2.0 * level * np.sqrt(w[1])),
            height=float(2.0 * level * np.sqrt(w[0])),
            angle=angle,
        )
        for level in levels
    ]
