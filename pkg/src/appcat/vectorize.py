"""Feature-group vectorization: TF-IDF for string sets, min-max scaling,
horizontal concatenation, and PCA via covariance eigendecomposition.

The TF-IDF variant is pinned (smoothed idf ``ln((1+N)/(1+df)) + 1``, raw
term frequency, L2 row normalization) and recorded in persisted model
files so results stay reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1
TFIDF_VARIANT = "smooth-idf/raw-tf/l2"

DocTerms = Iterable[str] | Mapping[str, int]


@dataclass
class FeatureMatrix:
    """Dense numeric matrix with row identity; rows follow manifest order."""

    row_ids: list[str]
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if self.data.shape[0] != len(self.row_ids):
            raise ValueError(
                f"{len(self.row_ids)} row ids for {self.data.shape[0]} rows"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature matrix contains NaN or Inf")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]


def _term_counts(doc: DocTerms) -> dict[str, int]:
    if isinstance(doc, Mapping):
        return {str(t): int(c) for t, c in doc.items() if int(c) > 0}
    return {str(t): 1 for t in doc}


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: dict[str, int]
    idf: np.ndarray
    n_docs: int

    def __post_init__(self) -> None:
        if sorted(self.vocabulary.values()) != list(range(len(self.vocabulary))):
            raise ValueError("vocabulary indices must be dense 0..V-1")
        if np.any(self.idf <= 0):
            raise ValueError("idf values must be positive")

    def to_payload(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "tfidf",
            "variant": TFIDF_VARIANT,
            "n_docs": self.n_docs,
            "vocabulary": self.vocabulary,
            "idf": [float(v) for v in self.idf],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TfidfModel":
        if payload.get("kind") != "tfidf":
            raise ValueError("not a tfidf model payload")
        return cls(
            vocabulary={str(k): int(v) for k, v in payload["vocabulary"].items()},
            idf=np.asarray(payload["idf"], dtype=np.float64),
            n_docs=int(payload["n_docs"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "TfidfModel":
        return cls.from_payload(json.loads(Path(path).read_text(encoding="utf-8")))


def tfidf_fit(docs: Sequence[DocTerms]) -> TfidfModel:
    """Build vocabulary and smoothed idf over the corpus."""
    if len(docs) == 0:
        raise ValueError("tfidf_fit needs at least one document")
    df: dict[str, int] = {}
    for doc in docs:
        for term in _term_counts(doc):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise ValueError("all documents are empty")
    vocabulary = {term: i for i, term in enumerate(sorted(df))}
    n = len(docs)
    idf = np.empty(len(vocabulary), dtype=np.float64)
    for term, index in vocabulary.items():
        idf[index] = np.log((1.0 + n) / (1.0 + df[term])) + 1.0
    return TfidfModel(vocabulary=vocabulary, idf=idf, n_docs=n)


def tfidf_transform(
    model: TfidfModel, docs: Sequence[DocTerms], row_ids: Sequence[str] | None = None
) -> FeatureMatrix:
    """tf·idf rows, L2-normalized; out-of-vocabulary terms are dropped."""
    if row_ids is None:
        row_ids = [str(i) for i in range(len(docs))]
    out = np.zeros((len(docs), len(model.vocabulary)), dtype=np.float64)
    for row, doc in enumerate(docs):
        for term, count in _term_counts(doc).items():
            index = model.vocabulary.get(term)
            if index is not None:
                out[row, index] = count * model.idf[index]
        norm = np.linalg.norm(out[row])
        if norm > 0.0:
            out[row] /= norm
    return FeatureMatrix(row_ids=list(row_ids), data=out)


def minmax_normalize(
    m: FeatureMatrix,
) -> tuple[FeatureMatrix, np.ndarray, np.ndarray]:
    """Map each column affinely onto [0, 1]; constant columns map to 0.

    Returns the scaled matrix plus the per-column (min, max) used, so a
    test-time matrix can be scaled with the training statistics.
    """
    if m.n_rows < 1:
        raise ValueError("minmax_normalize needs at least one row")
    col_min = m.data.min(axis=0)
    col_max = m.data.max(axis=0)
    scaled = apply_minmax(m, col_min, col_max)
    return scaled, col_min, col_max


def apply_minmax(
    m: FeatureMatrix, col_min: np.ndarray, col_max: np.ndarray
) -> FeatureMatrix:
    span = col_max - col_min
    safe_span = np.where(span > 0, span, 1.0)
    scaled = (m.data - col_min) / safe_span
    scaled[:, span <= 0] = 0.0
    return FeatureMatrix(row_ids=list(m.row_ids), data=scaled)


def concat(matrices: Sequence[FeatureMatrix]) -> FeatureMatrix:
    """Column-wise concatenation; all inputs must share row ids and order."""
    if len(matrices) == 0:
        raise ValueError("concat needs at least one matrix")
    first_ids = matrices[0].row_ids
    for m in matrices[1:]:
        if m.row_ids != first_ids:
            raise ValueError("row ids (or their order) differ between inputs")
    return FeatureMatrix(
        row_ids=list(first_ids),
        data=np.hstack([m.data for m in matrices]),
    )


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (q, d), rows orthonormal
    explained_variance: np.ndarray  # (q,), non-increasing

    def __post_init__(self) -> None:
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(self.components.shape[0]), atol=1e-8):
            raise ValueError("components are not orthonormal")
        if np.any(np.diff(self.explained_variance) > 1e-12):
            raise ValueError("explained_variance must be non-increasing")

    def transform(self, m: FeatureMatrix) -> FeatureMatrix:
        if m.n_cols != self.mean.shape[0]:
            raise ValueError(
                f"matrix has {m.n_cols} columns, model expects {self.mean.shape[0]}"
            )
        return FeatureMatrix(
            row_ids=list(m.row_ids),
            data=(m.data - self.mean) @ self.components.T,
        )

    def inverse_transform(self, m: FeatureMatrix) -> FeatureMatrix:
        return FeatureMatrix(
            row_ids=list(m.row_ids),
            data=m.data @ self.components + self.mean,
        )

    def to_payload(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "pca",
            "mean": [float(v) for v in self.mean],
            "components": [[float(v) for v in row] for row in self.components],
            "explained_variance": [float(v) for v in self.explained_variance],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "PcaModel":
        if payload.get("kind") != "pca":
            raise ValueError("not a pca model payload")
        return cls(
            mean=np.asarray(payload["mean"], dtype=np.float64),
            components=np.asarray(payload["components"], dtype=np.float64),
            explained_variance=np.asarray(
                payload["explained_variance"], dtype=np.float64
            ),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        return cls.from_payload(json.loads(Path(path).read_text(encoding="utf-8")))


def pca_fit_transform(
    m: FeatureMatrix, variance_target: float | int = 0.95
) -> tuple[PcaModel, FeatureMatrix]:
    """Center, eigendecompose the covariance, keep enough components.

    ``variance_target`` is either a ratio in (0, 1] (smallest component
    count whose cumulative explained-variance ratio reaches it) or an
    integer fixed dimensionality. Component signs are made deterministic
    by flipping each so its largest-magnitude entry is positive.
    """
    if m.n_rows < 2:
        raise ValueError("pca needs at least 2 rows")
    if m.n_cols < 1:
        raise ValueError("pca needs at least 1 column")
    mean = m.data.mean(axis=0)
    centered = m.data - mean
    cov = (centered.T @ centered) / (m.n_rows - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]
    total = float(eigenvalues.sum())
    if total <= 1e-12:
        raise ValueError("pca input has zero variance (all rows identical)")

    if isinstance(variance_target, int) and not isinstance(variance_target, bool):
        q = variance_target
        if not 1 <= q <= m.n_cols:
            raise ValueError(f"fixed dimensionality {q} out of range [1, {m.n_cols}]")
    else:
        ratio = float(variance_target)
        if not 0.0 < ratio <= 1.0:
            raise ValueError("variance target ratio must be in (0, 1]")
        cumulative = np.cumsum(eigenvalues) / total
        q = int(np.searchsorted(cumulative, ratio - 1e-12) + 1)
        q = min(q, m.n_cols)

    components = eigenvectors[:, :q].T.copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    model = PcaModel(
        mean=mean,
        components=components,
        explained_variance=eigenvalues[:q].copy(),
    )
    return model, model.transform(m)
