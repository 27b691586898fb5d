"""Clustering agreement (contingency table, adjusted Rand index) and
detection-rate metrics.

All pair counts are computed with Python integers, so products at the
five-thousand-element scale never overflow or round; a single float
division happens at the very end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping


class PartitionMismatchError(ValueError):
    """The two partitions do not cover the same element set."""


class UndefinedRateError(ValueError):
    """A rate denominator is zero."""


@dataclass(frozen=True)
class Partition:
    """Assignment of element ids to opaque cluster labels."""

    assignments: Mapping[str, str]

    @property
    def n(self) -> int:
        return len(self.assignments)

    @classmethod
    def from_labels(cls, ids: Iterable[str], labels: Iterable[str]) -> "Partition":
        ids = list(ids)
        labels = [str(lab) for lab in labels]
        if len(ids) != len(labels):
            raise ValueError("ids and labels differ in length")
        return cls(dict(zip(ids, labels)))

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[str]]) -> "Partition":
        assignments: dict[str, str] = {}
        for idx, block in enumerate(blocks):
            for element in block:
                if element in assignments:
                    raise ValueError(f"element {element!r} appears in two blocks")
                assignments[element] = str(idx)
        return cls(assignments)

    def blocks(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for element, label in self.assignments.items():
            out.setdefault(label, set()).add(element)
        return out

    def same_blocks(self, other: "Partition") -> bool:
        """True when both group the elements identically (labels ignored)."""
        mine = sorted(frozenset(b) for b in self.blocks().values())
        theirs = sorted(frozenset(b) for b in other.blocks().values())
        return mine == theirs

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["app_id", "cluster_id"])
            for element, label in self.assignments.items():
                writer.writerow([element, label])

    @classmethod
    def load_csv(cls, path: str | Path) -> "Partition":
        assignments: dict[str, str] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["app_id", "cluster_id"]:
                raise ValueError(f"{path}: expected header app_id,cluster_id")
            for row in reader:
                if len(row) != 2:
                    raise ValueError(f"{path}: malformed row {row!r}")
                if row[0] in assignments:
                    raise ValueError(f"{path}: duplicate id {row[0]!r}")
                assignments[row[0]] = row[1]
        return cls(assignments)


@dataclass(frozen=True)
class ContingencyTable:
    """Block-overlap counts between two partitions of the same elements."""

    counts: tuple[tuple[int, ...], ...]
    row_sums: tuple[int, ...]
    col_sums: tuple[int, ...]
    n: int

    def __post_init__(self) -> None:
        for i, row in enumerate(self.counts):
            if sum(row) != self.row_sums[i]:
                raise ValueError("row sums inconsistent with counts")
        for j in range(len(self.col_sums)):
            if sum(row[j] for row in self.counts) != self.col_sums[j]:
                raise ValueError("column sums inconsistent with counts")
        if sum(self.row_sums) != self.n:
            raise ValueError("total inconsistent with counts")


def _check_same_elements(x: Partition, y: Partition) -> None:
    xs, ys = set(x.assignments), set(y.assignments)
    if xs != ys:
        missing = sorted(xs ^ ys)
        raise PartitionMismatchError(
            f"partitions cover different elements; symmetric difference: {missing}"
        )


def contingency_table(x: Partition, y: Partition) -> ContingencyTable:
    """Cross-tabulate how the blocks of ``x`` intersect the blocks of ``y``."""
    _check_same_elements(x, y)
    x_labels = sorted(set(x.assignments.values()))
    y_labels = sorted(set(y.assignments.values()))
    x_index = {lab: i for i, lab in enumerate(x_labels)}
    y_index = {lab: j for j, lab in enumerate(y_labels)}
    counts = [[0] * len(y_labels) for _ in x_labels]
    for element, x_lab in x.assignments.items():
        counts[x_index[x_lab]][y_index[y.assignments[element]]] += 1
    rows = tuple(tuple(row) for row in counts)
    return ContingencyTable(
        counts=rows,
        row_sums=tuple(sum(row) for row in rows),
        col_sums=tuple(sum(row[j] for row in rows) for j in range(len(y_labels))),
        n=x.n,
    )


def _pairs(count: int) -> int:
    return count * (count - 1) // 2


def adjusted_rand_index(x: Partition, y: Partition) -> float:
    """Chance-corrected pair-counting agreement between two partitions.

    Returns 1.0 for identical partitions and about 0.0 for random
    agreement; the minimum is -1. Symmetric and invariant under
    relabeling of either side's cluster ids.
    """
    _check_same_elements(x, y)
    if x.n < 2:
        raise ValueError("adjusted Rand index needs at least 2 elements")
    table = contingency_table(x, y)
    s = sum(_pairs(nij) for row in table.counts for nij in row)
    a = sum(_pairs(ai) for ai in table.row_sums)
    b = sum(_pairs(bj) for bj in table.col_sums)
    total = _pairs(table.n)
    # ARI = (s - a*b/total) / ((a+b)/2 - a*b/total), scaled by 2*total to
    # stay in integers until the final division.
    numerator = 2 * s * total - 2 * a * b
    denominator = total * (a + b) - 2 * a * b
    if denominator == 0:
        # Both all-singletons or both one-block: defined as 1 when the
        # partitions agree, 0 otherwise.
        return 1.0 if x.same_blocks(y) else 0.0
    return numerator / denominator


@dataclass(frozen=True)
class DetectionCounts:
    """Confusion counts with malicious-as-positive convention."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n_malicious(self) -> int:
        return self.tp + self.fn

    @property
    def n_benign(self) -> int:
        return self.tn + self.fp


@dataclass(frozen=True)
class DetectionRates:
    tpr: float
    fpr: float
    tnr: float
    fnr: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "tn_rate": self.tnr,
            "fp_rate": self.fpr,
            "fn_rate": self.fnr,
            "tp_rate": self.tpr,
            "f1": self.f1,
        }


def detection_metrics(counts: DetectionCounts) -> DetectionRates:
    """Rates and F1 for an anomaly detector used as a malware flagger.

    F1 = TP / (TP + (FP + FN) / 2), the positive-class harmonic mean.
    """
    if counts.n_malicious == 0:
        raise UndefinedRateError("no malicious examples: TPR/FNR undefined")
    if counts.n_benign == 0:
        raise UndefinedRateError("no benign examples: FPR/TNR undefined")
    tpr = counts.tp / counts.n_malicious
    fpr = counts.fp / counts.n_benign
    f1_denominator = counts.tp + 0.5 * (counts.fp + counts.fn)
    f1 = counts.tp / f1_denominator if f1_denominator > 0 else 0.0
    return DetectionRates(tpr=tpr, fpr=fpr, tnr=1.0 - fpr, fnr=1.0 - tpr, f1=f1)
