"""Per-cluster anomaly detection with a nu-one-class SVM.

The solver works on the standard one-class dual

    minimize   1/2 * sum_ij alpha_i alpha_j K(x_i, x_j)
    subject to 0 <= alpha_i <= 1/(nu * n),  sum_i alpha_i = 1

using pairwise coordinate updates that preserve the equality constraint
(select the maximally KKT-violating pair, move mass from the
highest-gradient to the lowest-gradient coordinate). The offset rho is
the average decision value over unbounded support vectors, falling back
to all support vectors, and the decision function is
``f(x) = sum_i alpha_i K(x_i, x) - rho`` with ``f(x) < 0`` flagged as an
anomaly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .vectorize import FeatureMatrix

FORMAT_VERSION = 1
# Stop at a KKT violation far below the 1e-4 contract: boundary support
# vectors then sit within ~1e-8 of f(x) = 0, which keeps the nu-property
# exact when training points are scored.
KKT_TOL = 1e-8
MAX_ITER = 500_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (KKT residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class KernelSpec:
    name: str  # "rbf" or "linear"
    gamma: float | None = None  # rbf only; None means 1/d

    def __post_init__(self) -> None:
        if self.name not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.name == "rbf" and self.gamma is not None and self.gamma <= 0:
            raise ValueError("rbf gamma must be positive")

    def resolve_gamma(self, dim: int) -> float:
        if self.name != "rbf":
            return 0.0
        return self.gamma if self.gamma is not None else 1.0 / dim

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel values between the rows of ``a`` and the rows of ``b``."""
        if self.name == "linear":
            return a @ b.T
        gamma = self.resolve_gamma(a.shape[1])
        sq = (
            np.einsum("ij,ij->i", a, a)[:, None]
            - 2.0 * a @ b.T
            + np.einsum("ij,ij->i", b, b)[None, :]
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))


def feature_list_hash(signatures: Sequence[str]) -> str:
    """Fingerprint of the ordered feature list, to refuse mismatched scoring."""
    digest = hashlib.sha256("\n".join(signatures).encode("utf-8")).hexdigest()
    return digest[:16]


def binary_api_matrix(
    per_app_counts: Sequence[Mapping[str, int]],
    signatures: Sequence[str],
    row_ids: Sequence[str],
) -> FeatureMatrix:
    """Presence bits over the global sorted signature list, one row per app."""
    index = {sig: i for i, sig in enumerate(signatures)}
    data = np.zeros((len(per_app_counts), len(signatures)), dtype=np.float64)
    for row, counts in enumerate(per_app_counts):
        for sig, count in counts.items():
            if count > 0 and sig in index:
                data[row, index[sig]] = 1.0
    return FeatureMatrix(row_ids=list(row_ids), data=data)


@dataclass
class OcSvmModel:
    support_vectors: np.ndarray  # (m, d)
    alphas: np.ndarray  # (m,), each in (0, 1/(nu*n)]
    rho: float
    nu: float
    kernel: KernelSpec
    cluster_id: str = ""
    n_train: int = 0
    feature_hash: str = ""
    kkt_residual: float = 0.0
    boundary_tol: float = 1e-9

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def low_confidence(self) -> bool:
        return self.n_train < 5

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "kind": "ocsvm",
            "nu": self.nu,
            "kernel": {"name": self.kernel.name, "gamma": self.kernel.gamma},
            "rho": self.rho,
            "cluster_id": self.cluster_id,
            "n_train": self.n_train,
            "feature_hash": self.feature_hash,
            "kkt_residual": self.kkt_residual,
            "boundary_tol": self.boundary_tol,
            "alphas": [float(a) for a in self.alphas],
            "support_vectors": [
                [float(v) for v in row] for row in self.support_vectors
            ],
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "OcSvmModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != "ocsvm":
            raise ValueError(f"{path}: not an ocsvm model file")
        kernel = payload["kernel"]
        return cls(
            support_vectors=np.asarray(payload["support_vectors"], dtype=np.float64),
            alphas=np.asarray(payload["alphas"], dtype=np.float64),
            rho=float(payload["rho"]),
            nu=float(payload["nu"]),
            kernel=KernelSpec(
                name=kernel["name"],
                gamma=None if kernel["gamma"] is None else float(kernel["gamma"]),
            ),
            cluster_id=str(payload["cluster_id"]),
            n_train=int(payload["n_train"]),
            feature_hash=str(payload["feature_hash"]),
            kkt_residual=float(payload.get("kkt_residual", 0.0)),
            boundary_tol=float(payload.get("boundary_tol", 1e-9)),
        )


def ocsvm_fit(
    rows: FeatureMatrix,
    nu: float = 0.1,
    kernel: KernelSpec = KernelSpec("rbf"),
    seed: int = 0,
    cluster_id: str = "",
    feature_hash: str = "",
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
) -> OcSvmModel:
    """Solve the one-class dual to a KKT violation below ``tol``.

    The pair-selection rule is deterministic, so ``seed`` has no effect
    on the result; it is part of the signature so sweep configurations
    stay uniform across model kinds.
    """
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if rows.n_rows < 2:
        raise ValueError("ocsvm_fit needs at least 2 rows")
    points = rows.data
    if not np.all(np.isfinite(points)):
        raise ValueError("training rows contain non-finite values")
    # Resolve gamma now so the persisted model scores with the training
    # dimensionality even if callers later pass differently shaped data.
    resolved_kernel = (
        KernelSpec("rbf", kernel.resolve_gamma(points.shape[1]))
        if kernel.name == "rbf"
        else kernel
    )
    n = points.shape[0]
    cap = 1.0 / (nu * n)
    gram = resolved_kernel.matrix(points, points)

    alpha = np.full(n, 1.0 / n, dtype=np.float64)
    gradient = gram @ alpha
    residual = float("inf")
    for _ in range(max_iter):
        grow_idx = np.flatnonzero(alpha < cap - 1e-12 * cap)
        shrink_idx = np.flatnonzero(alpha > 1e-12 * cap)
        if grow_idx.size == 0 or shrink_idx.size == 0:
            # nu*n <= 1 forces every alpha to the cap: nothing to move.
            residual = 0.0
            break
        i = int(grow_idx[np.argmin(gradient[grow_idx])])
        j = int(shrink_idx[np.argmax(gradient[shrink_idx])])
        residual = float(gradient[j] - gradient[i])
        if residual < tol:
            break
        eta = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if eta <= 1e-15:
            eta = 1e-15
        step = residual / eta
        step = min(step, cap - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        gradient += step * (gram[:, i] - gram[:, j])
    else:
        raise ConvergenceError(
            f"one-class SVM did not converge within {max_iter} iterations",
            residual,
        )

    sv_mask = alpha > 1e-10
    sv_alpha = alpha[sv_mask]
    sv_points = points[sv_mask]
    sv_gradient = gradient[sv_mask]
    unbounded = (sv_alpha > cap * 1e-6) & (sv_alpha < cap * (1.0 - 1e-6))
    if np.any(unbounded):
        rho = float(sv_gradient[unbounded].mean())
    else:
        rho = float(sv_gradient.mean())
    return OcSvmModel(
        support_vectors=sv_points.copy(),
        alphas=sv_alpha.copy(),
        rho=rho,
        nu=nu,
        kernel=resolved_kernel,
        cluster_id=cluster_id,
        n_train=n,
        feature_hash=feature_hash,
        kkt_residual=residual,
        boundary_tol=max(1e-12, 10.0 * abs(residual)),
    )


def ocsvm_score(
    model: OcSvmModel, rows: FeatureMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """Decision values and anomaly flags (``score < 0``) per row.

    Negative scores within the model's ``boundary_tol`` (tied to the
    solver's KKT residual, ~1e-7 at the default tolerance) are decision
    noise on boundary support vectors and count as inliers.
    """
    if rows.n_cols != model.dim:
        raise ValueError(
            f"matrix has {rows.n_cols} columns, model expects {model.dim}"
        )
    kernel_values = model.kernel.matrix(rows.data, model.support_vectors)
    scores = kernel_values @ model.alphas - model.rho
    return scores, scores < -model.boundary_tol


def dual_objective(model: OcSvmModel) -> float:
    gram = model.kernel.matrix(model.support_vectors, model.support_vectors)
    return float(0.5 * model.alphas @ gram @ model.alphas)
