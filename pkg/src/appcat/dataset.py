"""Ground-truth manifest loading, stratified splitting, and malware merging.

Manifests are JSON-lines files (one object per row, UTF-8). A benign
ground-truth row carries a non-empty class label; malware rows may omit
it and must set ``is_malicious``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence


class ManifestError(ValueError):
    """Malformed manifest content (parse failure, duplicate or missing field)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class AppRecord:
    """One app: identity, ground-truth class, store metadata, APK location."""

    app_id: str
    class_label: str | None = None
    gplay_category_id: str = ""
    description: str = ""
    apk_path: str | None = None
    sha256: str | None = None
    is_malicious: bool = False

    def __post_init__(self) -> None:
        if not self.app_id:
            raise ValueError("app_id must be non-empty")
        if not self.is_malicious and not self.class_label:
            raise ValueError(f"{self.app_id}: benign record needs a class_label")

    def to_json_obj(self) -> dict:
        obj: dict = {"app_id": self.app_id}
        if self.class_label is not None:
            obj["class_label"] = self.class_label
        if self.gplay_category_id:
            obj["gplay_category_id"] = self.gplay_category_id
        obj["description"] = self.description
        if self.apk_path is not None:
            obj["apk_path"] = self.apk_path
        if self.sha256 is not None:
            obj["sha256"] = self.sha256
        if self.is_malicious:
            obj["is_malicious"] = True
        return obj


@dataclass(frozen=True)
class Manifest:
    records: tuple[AppRecord, ...]

    @property
    def class_set(self) -> frozenset[str]:
        return frozenset(
            r.class_label for r in self.records if r.class_label is not None
        )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, app_id: str) -> AppRecord:
        try:
            return self._index[app_id]
        except KeyError:
            raise KeyError(f"unknown app_id {app_id!r}") from None

    @property
    def _index(self) -> dict[str, AppRecord]:
        # Built lazily; records are immutable so caching on the instance
        # dict is safe even though the dataclass is frozen.
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {r.app_id: r for r in self.records}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def by_class(self) -> dict[str, list[AppRecord]]:
        grouped: dict[str, list[AppRecord]] = {}
        for record in self.records:
            if record.class_label is not None:
                grouped.setdefault(record.class_label, []).append(record)
        return grouped

    @property
    def n_malicious(self) -> int:
        return sum(1 for r in self.records if r.is_malicious)

    @property
    def n_benign(self) -> int:
        return len(self.records) - self.n_malicious

    def subset(self, app_ids: Sequence[str]) -> "Manifest":
        """Records for the given ids, in the order the ids are given."""
        return Manifest(tuple(self.get(app_id) for app_id in app_ids))


def _record_from_obj(obj: dict, line: int) -> AppRecord:
    if not isinstance(obj, dict):
        raise ManifestError("row is not a JSON object", line)
    if "app_id" not in obj or not obj["app_id"]:
        raise ManifestError("missing required field 'app_id'", line)
    is_malicious = bool(obj.get("is_malicious", False))
    class_label = obj.get("class_label")
    if not is_malicious and not class_label:
        raise ManifestError(
            f"missing required field 'class_label' for benign app {obj['app_id']!r}",
            line,
        )
    try:
        return AppRecord(
            app_id=str(obj["app_id"]),
            class_label=str(class_label) if class_label else None,
            gplay_category_id=str(obj.get("gplay_category_id", "")),
            description=str(obj.get("description", "")),
            apk_path=str(obj["apk_path"]) if obj.get("apk_path") else None,
            sha256=str(obj["sha256"]) if obj.get("sha256") else None,
            is_malicious=is_malicious,
        )
    except ValueError as exc:
        raise ManifestError(str(exc), line) from exc


def load_manifest(path: str | Path) -> Manifest:
    """Read a JSON-lines manifest, preserving row order.

    Raises ManifestError with the 1-based line number on parse failures,
    missing required fields, or duplicated app ids.
    """
    records: list[AppRecord] = []
    seen: set[str] = set()
    raw = Path(path).read_bytes().decode("utf-8", errors="replace")
    for line_no, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON ({exc.msg})", line_no) from exc
        record = _record_from_obj(obj, line_no)
        if record.app_id in seen:
            raise ManifestError(f"duplicate app_id {record.app_id!r}", line_no)
        seen.add(record.app_id)
        records.append(record)
    return Manifest(tuple(records))


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in manifest.records:
            fh.write(json.dumps(record.to_json_obj(), sort_keys=True))
            fh.write("\n")


@dataclass(frozen=True)
class Split:
    """Disjoint train/test id lists plus the seed that produced them."""

    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self) -> None:
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"train/test overlap: {sorted(overlap)[:5]}")

    def save(self, path: str | Path) -> None:
        payload = {
            "seed": self.seed,
            "train": list(self.train),
            "test": list(self.test),
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Split":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            train=tuple(payload["train"]),
            test=tuple(payload["test"]),
            seed=int(payload["seed"]),
        )


def stratified_split(manifest: Manifest, train_fraction: float, seed: int) -> Split:
    """Per-class split with ceiling rounding of the train share.

    Classes are processed in sorted order and shuffled with a single
    seeded generator, so the result is a pure function of
    (manifest, train_fraction, seed).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    grouped = manifest.by_class()
    if len(grouped) == 0:
        raise ManifestError("manifest has no labeled records to split")
    unlabeled = [r.app_id for r in manifest.records if r.class_label is None]
    if unlabeled:
        raise ManifestError(
            f"cannot stratify records without class_label: {unlabeled[:5]}"
        )
    rng = random.Random(seed)
    # Exact rational ceiling: float rounding must not flip a boundary
    # count (e.g. 0.7 * 10 is 7.000000000000001 in binary).
    fraction = Fraction(train_fraction).limit_denominator(10**9)
    train: list[str] = []
    test: list[str] = []
    for label in sorted(grouped):
        ids = [r.app_id for r in grouped[label]]
        if len(ids) < 2:
            raise ManifestError(f"class {label!r} has fewer than 2 records")
        rng.shuffle(ids)
        n_train = math.ceil(fraction * len(ids))
        train.extend(ids[:n_train])
        test.extend(ids[n_train:])
    return Split(train=tuple(train), test=tuple(test), seed=seed)


def merge_malware(
    benign: Manifest, test_ids: Sequence[str], malware: Manifest
) -> Manifest:
    """Combine the benign test rows with a malware set into one manifest.

    Malware rows must be flagged ``is_malicious``; an app id present on
    both sides is an error.
    """
    for record in malware.records:
        if not record.is_malicious:
            raise ManifestError(
                f"malware manifest row {record.app_id!r} not flagged is_malicious"
            )
    benign_rows = [benign.get(app_id) for app_id in test_ids]
    benign_ids = {r.app_id for r in benign_rows}
    collisions = benign_ids & {r.app_id for r in malware.records}
    if collisions:
        raise ManifestError(
            f"app ids present in both benign and malware sets: {sorted(collisions)[:5]}"
        )
    return Manifest(tuple(benign_rows) + malware.records)
