"""Seeded K-Means: k-means++ initialization, Lloyd iterations with
empty-cluster repair, best-of-restarts selection, JSON persistence, and
test-time assignment.

Everything is a pure function of (data, k, seed, restarts): restarts use
independent child generators spawned from the seed, ties in assignment
go to the lowest centroid index, and the best restart is the first one
attaining the minimal inertia.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import Partition
from .vectorize import FeatureMatrix

FORMAT_VERSION = 1
MAX_ITER = 300
SHIFT_TOL = 1e-6


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray  # (k, d)
    seed: int
    inertia: float
    iterations_run: int
    restarts: int = 1
    inertia_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids contain non-finite values")
        if self.centroids.shape[0] != self.k:
            raise ValueError("centroid count differs from k")

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "kind": "kmeans",
            "k": self.k,
            "seed": self.seed,
            "restarts": self.restarts,
            "inertia": float(self.inertia),
            "iterations_run": self.iterations_run,
            "dim": self.dim,
            "centroids": [[float(v) for v in row] for row in self.centroids],
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "KMeansModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != "kmeans":
            raise ValueError(f"{path}: not a kmeans model file")
        return cls(
            k=int(payload["k"]),
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            seed=int(payload["seed"]),
            inertia=float(payload["inertia"]),
            iterations_run=int(payload["iterations_run"]),
            restarts=int(payload.get("restarts", 1)),
        )


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, computed blockwise."""
    # ||x||^2 - 2 x.c + ||c||^2; clip tiny negatives from cancellation.
    sq = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(sq, 0.0)


def _kmeans_plus_plus(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Greedy k-means++: per step, draw several D^2-weighted candidates
    and keep the one that lowers the total potential most."""
    n = points.shape[0]
    n_candidates = 2 + int(np.log(k))
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = _squared_distances(points, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining points coincide with a chosen centroid.
            candidates = rng.integers(n, size=1)
        else:
            candidates = rng.choice(n, size=n_candidates, p=closest / total)
        best_index = 0
        best_closest = None
        best_potential = np.inf
        for candidate in candidates:
            trial = np.minimum(
                closest,
                _squared_distances(
                    points, points[int(candidate)][None, :]
                ).ravel(),
            )
            potential = trial.sum()
            if potential < best_potential:
                best_potential = potential
                best_closest = trial
                best_index = int(candidate)
        centroids[i] = points[best_index]
        closest = best_closest
    return centroids


def _repair_empty(
    points: np.ndarray,
    centroids: np.ndarray,
    labels: np.ndarray,
    distances: np.ndarray,
) -> None:
    """Give each empty cluster the point currently farthest from its centroid."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    assigned_dist = distances[np.arange(points.shape[0]), labels].copy()
    for cluster in np.flatnonzero(counts == 0):
        # Never seize the sole member of another cluster.
        candidates = np.flatnonzero(counts[labels] > 1)
        if candidates.size == 0:
            continue
        victim = candidates[np.argmax(assigned_dist[candidates])]
        counts[labels[victim]] -= 1
        labels[victim] = cluster
        counts[cluster] = 1
        centroids[cluster] = points[victim]
        assigned_dist[victim] = 0.0


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    centroids = _kmeans_plus_plus(points, k, rng)
    labels = np.zeros(points.shape[0], dtype=np.int64)
    trace: list[float] = []
    iterations = 0
    for iteration in range(1, MAX_ITER + 1):
        iterations = iteration
        distances = _squared_distances(points, centroids)
        labels = np.argmin(distances, axis=1)
        new_centroids = centroids.copy()
        for cluster in range(k):
            members = points[labels == cluster]
            if members.shape[0] > 0:
                new_centroids[cluster] = members.mean(axis=0)
        distances = _squared_distances(points, new_centroids)
        _repair_empty(points, new_centroids, np.argmin(distances, axis=1), distances)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        distances = _squared_distances(points, centroids)
        labels = np.argmin(distances, axis=1)
        inertia = float(distances[np.arange(points.shape[0]), labels].sum())
        trace.append(inertia)
        if shift < SHIFT_TOL:
            break
    return centroids, labels, trace[-1], iterations, trace


def kmeans_fit(
    m: FeatureMatrix, k: int, seed: int, restarts: int = 4
) -> KMeansModel:
    """Best-of-restarts Lloyd's with k-means++ seeding.

    Deterministic for fixed (data, k, seed, restarts). The model keeps
    the winning restart's per-iteration inertia trace.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if m.n_rows < k:
        raise ValueError(f"k={k} exceeds row count {m.n_rows}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    points = m.data
    best: tuple[np.ndarray, float, int, list[float]] | None = None
    for restart in range(restarts):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(restart,))
        )
        centroids, _, inertia, iterations, trace = _lloyd(points, k, rng)
        if best is None or inertia < best[1]:
            best = (centroids, inertia, iterations, trace)
    assert best is not None
    centroids, inertia, iterations, trace = best
    return KMeansModel(
        k=k,
        centroids=centroids,
        seed=seed,
        inertia=inertia,
        iterations_run=iterations,
        restarts=restarts,
        inertia_trace=trace,
    )


def kmeans_assign(model: KMeansModel, m: FeatureMatrix) -> Partition:
    """Label each row with its nearest centroid; ties go to the lowest index."""
    if m.n_cols != model.dim:
        raise ValueError(
            f"matrix has {m.n_cols} columns, model expects {model.dim}"
        )
    distances = _squared_distances(m.data, model.centroids)
    labels = np.argmin(distances, axis=1)
    return Partition.from_labels(m.row_ids, [str(int(lab)) for lab in labels])
