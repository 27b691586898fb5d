"""End-to-end pipelines: feature extraction over a manifest, description-
or APK-feature-based categorization, split/train/score anomaly
detection, and evaluation reports.

Every stage writes its intermediates (split, models, partitions,
reports) under the run's output directory, so later stages can be
re-run from disk without recomputing earlier ones. Report JSON is fully
deterministic for a fixed config and seed; wall-clock timings go to a
separate ``timings.json`` so reruns stay byte-identical.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import (
    KernelSpec,
    OcSvmModel,
    binary_api_matrix,
    feature_list_hash,
    ocsvm_fit,
    ocsvm_score,
)
from .apk.features import (
    ApkFeatures,
    PermissionApiMap,
    extract_all,
    load_features,
    load_library_prefixes,
    save_features,
)
from .apk.parsing import ApkParseError, NotAZipError
from .cluster import KMeansModel, kmeans_assign, kmeans_fit
from .dataset import Manifest, load_manifest, merge_malware, stratified_split
from .embed import EmbeddingCache, OfflineProvider, Provider, RemoteProvider, embed_texts
from .metrics import (
    DetectionCounts,
    Partition,
    UndefinedRateError,
    adjusted_rand_index,
    detection_metrics,
)
from .textprep import PrepConfig, joined_text, preprocess
from .vectorize import (
    FeatureMatrix,
    PcaModel,
    TfidfModel,
    apply_minmax,
    concat,
    minmax_normalize,
    pca_fit_transform,
    tfidf_fit,
    tfidf_transform,
)

REPORT_FORMAT_VERSION = 1

APK_FEATURE_GROUPS = ("name", "permissions", "apis", "strings", "icon", "libraries")
DESCRIPTION_GROUP = "description"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Missing or inconsistent input data for a pipeline stage."""


@dataclass(frozen=True)
class RunConfig:
    manifest_path: str = ""
    malware_manifest_path: str | None = None
    output_dir: str = "out"
    cache_dir: str | None = None
    features_dir: str | None = None
    provider: str = "offline"  # "offline" or "remote"
    api_key_env: str = "OPENAI_API_KEY"
    model: str = "text-embedding-ada-002"
    base_url: str = "https://api.openai.com/v1"
    features: tuple[str, ...] = (DESCRIPTION_GROUP,)
    k: int = 50
    seed: int = 0
    restarts: int = 4
    train_fraction: float = 0.9
    nu: float = 0.1
    kernel: str = "rbf"
    gamma: float | None = None
    pca_variance: float = 0.95
    min_token_len: int = 2
    api_map_path: str | None = None
    library_prefixes_path: str | None = None

    def validate(self) -> None:
        if self.provider not in ("offline", "remote"):
            raise ConfigError(f"unknown provider {self.provider!r}")
        if not self.features:
            raise ConfigError("feature selection must be non-empty")
        if DESCRIPTION_GROUP in self.features and len(self.features) > 1:
            raise ConfigError(
                "'description' is a standalone mode; do not mix it with APK groups"
            )
        for group in self.features:
            if group != DESCRIPTION_GROUP and group not in APK_FEATURE_GROUPS:
                raise ConfigError(f"unknown feature group {group!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 < self.nu <= 1.0:
            raise ConfigError("nu must be in (0, 1]")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")

    @property
    def mode(self) -> str:
        return (
            DESCRIPTION_GROUP
            if self.features == (DESCRIPTION_GROUP,)
            else "apk"
        )

    def as_dict(self) -> dict:
        return {
            "manifest_path": self.manifest_path,
            "malware_manifest_path": self.malware_manifest_path,
            "output_dir": self.output_dir,
            "cache_dir": self.cache_dir,
            "features_dir": self.features_dir,
            "provider": self.provider,
            "model": self.model if self.provider == "remote" else None,
            "features": list(self.features),
            "k": self.k,
            "seed": self.seed,
            "restarts": self.restarts,
            "train_fraction": self.train_fraction,
            "nu": self.nu,
            "kernel": self.kernel,
            "gamma": self.gamma,
            "pca_variance": self.pca_variance,
            "min_token_len": self.min_token_len,
        }

    def make_provider(self) -> Provider:
        if self.provider == "offline":
            return OfflineProvider()
        return RemoteProvider(
            model=self.model, base_url=self.base_url, api_key_env=self.api_key_env
        )

    def make_cache(self) -> EmbeddingCache | None:
        return EmbeddingCache(self.cache_dir) if self.cache_dir else None

    def prep_config(self) -> PrepConfig:
        return PrepConfig(min_token_len=self.min_token_len)

    def api_map(self) -> PermissionApiMap:
        if self.api_map_path:
            return PermissionApiMap.load_csv(self.api_map_path)
        return PermissionApiMap.bundled()

    def library_prefixes(self) -> tuple[str, ...]:
        return load_library_prefixes(self.library_prefixes_path)


def load_config_file(path: str | Path) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(payload) - {f.name for f in RunConfig.__dataclass_fields__.values()}
    if unknown:
        raise ConfigError(f"config file {path}: unknown keys {sorted(unknown)}")
    if "features" in payload:
        payload["features"] = tuple(payload["features"])
    return payload


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _safe_filename(app_id: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in app_id)


class StageTimer:
    """Accumulates per-stage wall-clock durations; persisted separately."""

    def __init__(self) -> None:
        self.timings: dict[str, float] = {}
        self._started: dict[str, float] = {}

    def start(self, stage: str) -> None:
        self._started[stage] = time.monotonic()

    def stop(self, stage: str) -> None:
        self.timings[stage] = round(
            time.monotonic() - self._started.pop(stage), 6
        )

    def save(self, out_dir: Path) -> None:
        _write_json(out_dir / "timings.json", {"seconds": self.timings})


class Featurizer:
    """Fits and applies the numeric featurization for a run.

    Description mode embeds preprocessed descriptions; APK mode builds
    one matrix per selected feature group (TF-IDF for string-like
    groups, embeddings for the name, raw descriptor for the icon) and,
    when more than one group is selected, concatenates, min-max scales,
    and reduces with PCA. All fitted statistics can be persisted and
    re-applied to test data.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.provider = config.make_provider()
        self.cache = config.make_cache()
        self.prep = config.prep_config()
        self.tfidf: dict[str, TfidfModel] = {}
        self.minmax: tuple[np.ndarray, np.ndarray] | None = None
        self.pca: PcaModel | None = None
        self.fitted = False

    # -- corpus accessors -------------------------------------------------

    def _descriptions(self, manifest: Manifest) -> list[str]:
        texts = []
        for record in manifest:
            if not record.description:
                raise DataError(
                    f"record {record.app_id!r} has no description; "
                    "description mode needs one for every app"
                )
            texts.append(joined_text(preprocess(record.description, self.prep)))
        return texts

    def _features(self, manifest: Manifest, features_by_id: dict[str, ApkFeatures]):
        missing = [r.app_id for r in manifest if r.app_id not in features_by_id]
        if missing:
            raise DataError(
                f"no extracted features for {len(missing)} apps "
                f"(first: {missing[:3]}); run the extract stage first"
            )
        return [features_by_id[r.app_id] for r in manifest]

    def _embed_matrix(self, texts: list[str], row_ids: list[str]) -> FeatureMatrix:
        vectors = embed_texts(texts, self.provider, cache=self.cache)
        data = np.vstack([v.values.astype(np.float64) for v in vectors])
        return FeatureMatrix(row_ids=row_ids, data=data)

    def _group_docs(self, group: str, feats: list[ApkFeatures]):
        if group == "permissions":
            return [sorted(f.permissions) for f in feats]
        if group == "apis":
            return [f.restricted_apis for f in feats]
        if group == "strings":
            return [sorted(f.strings) for f in feats]
        if group == "libraries":
            return [sorted(f.libraries) for f in feats]
        raise AssertionError(f"not a tf-idf group: {group}")

    def _group_matrix(
        self,
        group: str,
        manifest: Manifest,
        feats: list[ApkFeatures],
        fit: bool,
    ) -> FeatureMatrix:
        row_ids = [r.app_id for r in manifest]
        if group == "name":
            texts = [
                joined_text(preprocess(f.app_name, self.prep)) for f in feats
            ]
            return self._embed_matrix(texts, row_ids)
        if group == "icon":
            data = np.vstack([f.icon_descriptor for f in feats])
            return FeatureMatrix(row_ids=row_ids, data=data)
        docs = self._group_docs(group, feats)
        if fit:
            non_empty = [d for d in docs if len(d) > 0]
            if not non_empty:
                raise DataError(f"feature group {group!r} is empty for every app")
            self.tfidf[group] = tfidf_fit(docs)
        model = self.tfidf.get(group)
        if model is None:
            raise DataError(f"no fitted tf-idf model for group {group!r}")
        return tfidf_transform(model, docs, row_ids=row_ids)

    # -- public API --------------------------------------------------------

    def fit_transform(
        self, manifest: Manifest, features_by_id: dict[str, ApkFeatures] | None = None
    ) -> FeatureMatrix:
        matrix = self._build(manifest, features_by_id, fit=True)
        self.fitted = True
        return matrix

    def transform(
        self, manifest: Manifest, features_by_id: dict[str, ApkFeatures] | None = None
    ) -> FeatureMatrix:
        if not self.fitted:
            raise DataError("featurizer not fitted (and no saved state loaded)")
        return self._build(manifest, features_by_id, fit=False)

    def _build(
        self,
        manifest: Manifest,
        features_by_id: dict[str, ApkFeatures] | None,
        fit: bool,
    ) -> FeatureMatrix:
        if self.config.mode == DESCRIPTION_GROUP:
            row_ids = [r.app_id for r in manifest]
            return self._embed_matrix(self._descriptions(manifest), row_ids)
        if features_by_id is None:
            raise DataError("APK mode needs extracted features")
        feats = self._features(manifest, features_by_id)
        matrices = [
            self._group_matrix(group, manifest, feats, fit)
            for group in self.config.features
        ]
        if len(matrices) == 1:
            return matrices[0]
        combined = concat(matrices)
        if fit:
            scaled, col_min, col_max = minmax_normalize(combined)
            self.minmax = (col_min, col_max)
            self.pca, reduced = pca_fit_transform(scaled, self.config.pca_variance)
            return reduced
        if self.minmax is None or self.pca is None:
            raise DataError("combined-feature state missing from featurizer")
        scaled = apply_minmax(combined, self.minmax[0], self.minmax[1])
        return self.pca.transform(scaled)

    def save(self, path: Path) -> None:
        payload: dict = {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "featurizer",
            "mode": self.config.mode,
            "features": list(self.config.features),
            "provider_id": self.provider.provider_id,
            "min_token_len": self.prep.min_token_len,
            "tfidf": {g: m.to_payload() for g, m in self.tfidf.items()},
            "minmax": (
                None
                if self.minmax is None
                else {
                    "min": [float(v) for v in self.minmax[0]],
                    "max": [float(v) for v in self.minmax[1]],
                }
            ),
            "pca": None if self.pca is None else self.pca.to_payload(),
        }
        _write_json(path, payload)

    @classmethod
    def load(cls, path: Path, config: RunConfig) -> "Featurizer":
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read featurizer state {path}: {exc}") from exc
        if payload.get("kind") != "featurizer":
            raise DataError(f"{path}: not a featurizer state file")
        featurizer = cls(config)
        if payload["features"] != list(config.features):
            raise ConfigError(
                f"saved featurizer used features {payload['features']}, "
                f"config selects {list(config.features)}"
            )
        if payload["provider_id"] != featurizer.provider.provider_id:
            raise ConfigError(
                f"saved featurizer used provider {payload['provider_id']!r}, "
                f"config selects {featurizer.provider.provider_id!r}"
            )
        featurizer.tfidf = {
            g: TfidfModel.from_payload(p) for g, p in payload["tfidf"].items()
        }
        if payload["minmax"] is not None:
            featurizer.minmax = (
                np.asarray(payload["minmax"]["min"], dtype=np.float64),
                np.asarray(payload["minmax"]["max"], dtype=np.float64),
            )
        if payload["pca"] is not None:
            featurizer.pca = PcaModel.from_payload(payload["pca"])
        featurizer.fitted = True
        return featurizer


# -- extract ----------------------------------------------------------------


def _resolve_apk_path(record_path: str, manifest_path: str) -> Path:
    path = Path(record_path)
    if not path.is_absolute():
        path = Path(manifest_path).parent / path
    return path


def run_extract(config: RunConfig) -> dict:
    """Extract feature files for every manifest row with an APK.

    Per-app failures are recorded and skipped; only a run with zero
    successful extractions is an error.
    """
    config.validate()
    manifest = load_manifest(config.manifest_path)
    out_dir = Path(config.features_dir or Path(config.output_dir) / "features")
    out_dir.mkdir(parents=True, exist_ok=True)
    api_map = config.api_map()
    prefixes = config.library_prefixes()
    written: list[str] = []
    failures: list[dict] = []
    for record in manifest:
        if not record.apk_path:
            failures.append({"app_id": record.app_id, "error": "no apk_path"})
            continue
        apk = _resolve_apk_path(record.apk_path, config.manifest_path)
        try:
            features = extract_all(apk, api_map, prefixes)
        except (NotAZipError, ApkParseError, OSError) as exc:
            failures.append({"app_id": record.app_id, "error": str(exc)})
            continue
        save_features(
            features, record.app_id, out_dir / f"{_safe_filename(record.app_id)}.json"
        )
        written.append(record.app_id)
    if not written:
        raise DataError("no APK could be extracted; every row failed")
    return {
        "features_dir": str(out_dir),
        "written": len(written),
        "failed": failures,
    }


def load_features_dir(features_dir: str | Path) -> dict[str, ApkFeatures]:
    out: dict[str, ApkFeatures] = {}
    directory = Path(features_dir)
    if not directory.is_dir():
        raise DataError(f"features directory {directory} does not exist")
    for path in sorted(directory.glob("*.json")):
        app_id, features = load_features(path)
        out[app_id] = features
    return out


# -- categorize ---------------------------------------------------------------


def _labels_partition(manifest: Manifest) -> Partition:
    missing = [r.app_id for r in manifest if r.class_label is None]
    if missing:
        raise DataError(f"records without class_label: {missing[:5]}")
    return Partition.from_labels(
        [r.app_id for r in manifest], [r.class_label for r in manifest]
    )


def _configuration_name(config: RunConfig) -> str:
    if config.mode == DESCRIPTION_GROUP:
        return f"{DESCRIPTION_GROUP}+{config.provider}"
    return "+".join(config.features)


def _write_ari_csv(path: Path, rows: list[tuple[str, float]]) -> None:
    lines = ["configuration,ari"]
    lines += [f"{name},{value!r}" for name, value in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_categorize(config: RunConfig) -> dict:
    """Cluster the manifest's apps and report ARI against its labels."""
    config.validate()
    timer = StageTimer()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(config.manifest_path)

    features_by_id = None
    if config.mode != DESCRIPTION_GROUP:
        if not config.features_dir:
            raise ConfigError("APK mode needs --features-dir")
        features_by_id = load_features_dir(config.features_dir)

    timer.start("featurize")
    featurizer = Featurizer(config)
    matrix = featurizer.fit_transform(manifest, features_by_id)
    timer.stop("featurize")

    timer.start("cluster")
    model = kmeans_fit(matrix, k=config.k, seed=config.seed, restarts=config.restarts)
    partition = kmeans_assign(model, matrix)
    timer.stop("cluster")

    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    model.save(models_dir / "kmeans.json")
    featurizer.save(models_dir / "featurizer.json")
    partition.save_csv(out_dir / "partition.csv")

    ari = adjusted_rand_index(partition, _labels_partition(manifest))
    configuration = _configuration_name(config)
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "tool_version": __version__,
        "task": "categorize",
        "config": config.as_dict(),
        "n_apps": len(manifest),
        "n_classes": len(manifest.class_set),
        "ari": {configuration: ari},
        "kmeans": {
            "inertia": model.inertia,
            "iterations_run": model.iterations_run,
        },
        "warnings": [],
    }
    _write_json(out_dir / "report.json", report)
    _write_ari_csv(out_dir / "ari.csv", [(configuration, ari)])
    timer.save(out_dir)
    return report


# -- assign -------------------------------------------------------------------


def run_assign(config: RunConfig, models_dir: str | Path | None = None) -> dict:
    """Assign the manifest's apps to the saved clustering's clusters."""
    config.validate()
    out_dir = Path(config.output_dir)
    models = Path(models_dir) if models_dir else out_dir / "models"
    kmeans_path = models / "kmeans.json"
    if not kmeans_path.exists():
        raise DataError(f"no saved clustering at {kmeans_path}")
    model = KMeansModel.load(kmeans_path)
    featurizer = Featurizer.load(models / "featurizer.json", config)
    manifest = load_manifest(config.manifest_path)
    features_by_id = None
    if config.mode != DESCRIPTION_GROUP:
        if not config.features_dir:
            raise ConfigError("APK mode needs --features-dir")
        features_by_id = load_features_dir(config.features_dir)
    matrix = featurizer.transform(manifest, features_by_id)
    partition = kmeans_assign(model, matrix)
    out_dir.mkdir(parents=True, exist_ok=True)
    partition.save_csv(out_dir / "assignment.csv")
    return {"n_assigned": partition.n, "path": str(out_dir / "assignment.csv")}


# -- detect -------------------------------------------------------------------


def _api_features_matrix(
    manifest: Manifest,
    features_by_id: dict[str, ApkFeatures],
    signatures: tuple[str, ...],
) -> FeatureMatrix:
    missing = [r.app_id for r in manifest if r.app_id not in features_by_id]
    if missing:
        raise DataError(
            f"no extracted features for {len(missing)} apps (first: {missing[:3]})"
        )
    counts = [features_by_id[r.app_id].restricted_apis for r in manifest]
    return binary_api_matrix(counts, signatures, [r.app_id for r in manifest])


def _fit_cluster_models(
    train_matrix: FeatureMatrix,
    train_partition: Partition,
    config: RunConfig,
    fingerprint: str,
    warnings: list[str],
) -> dict[str, OcSvmModel]:
    kernel = KernelSpec(config.kernel, config.gamma)
    by_cluster: dict[str, list[int]] = {}
    for row, app_id in enumerate(train_matrix.row_ids):
        by_cluster.setdefault(train_partition.assignments[app_id], []).append(row)
    models: dict[str, OcSvmModel] = {}
    for cluster_id in sorted(by_cluster, key=lambda c: (len(c), c)):
        rows = by_cluster[cluster_id]
        data = train_matrix.data[rows]
        row_ids = [train_matrix.row_ids[r] for r in rows]
        if len(rows) == 1:
            # A one-app cluster still gets a model: duplicating the row
            # leaves the decision function unchanged.
            data = np.vstack([data, data])
            row_ids = row_ids * 2
        sub = FeatureMatrix(row_ids=row_ids, data=data)
        model = ocsvm_fit(
            sub,
            nu=config.nu,
            kernel=kernel,
            seed=config.seed,
            cluster_id=cluster_id,
            feature_hash=fingerprint,
        )
        model.n_train = len(rows)
        if model.low_confidence:
            warnings.append(
                f"cluster {cluster_id}: only {len(rows)} training apps; "
                "model is low-confidence"
            )
        models[cluster_id] = model
    return models


@dataclass
class DetectionOutcome:
    """Everything the scoring stage produced, ready for reporting."""

    counts: DetectionCounts
    scores: np.ndarray
    flags: np.ndarray
    cluster_models: dict[str, OcSvmModel]
    warnings: list[str]


def detect_with_partitions(
    train_manifest: Manifest,
    test_manifest: Manifest,
    features_by_id: dict[str, ApkFeatures],
    train_partition: Partition,
    test_partition: Partition,
    config: RunConfig,
) -> DetectionOutcome:
    """Train per-cluster one-class SVMs on the training partition's
    sensitive-API bits and score the test set through its assignment.

    The partitions are parameters, so the same feature data can be
    scored under different clusterings (e.g. learned vs random).
    """
    api_map = config.api_map()
    signatures = api_map.signatures
    fingerprint = feature_list_hash(signatures)
    warnings: list[str] = []
    train_api = _api_features_matrix(train_manifest, features_by_id, signatures)
    cluster_models = _fit_cluster_models(
        train_api, train_partition, config, fingerprint, warnings
    )
    test_api = _api_features_matrix(test_manifest, features_by_id, signatures)

    rows_by_cluster: dict[str, list[int]] = {}
    for row, record in enumerate(test_manifest):
        rows_by_cluster.setdefault(
            test_partition.assignments[record.app_id], []
        ).append(row)
    scores = np.zeros(len(test_manifest), dtype=np.float64)
    flags = np.zeros(len(test_manifest), dtype=bool)
    for cluster_id, rows in sorted(rows_by_cluster.items()):
        model = cluster_models.get(cluster_id)
        if model is None:
            raise DataError(
                f"test apps assigned to cluster {cluster_id} but no model "
                "was trained for it"
            )
        sub = FeatureMatrix(
            row_ids=[test_api.row_ids[r] for r in rows],
            data=test_api.data[rows],
        )
        sub_scores, sub_flags = ocsvm_score(model, sub)
        scores[rows] = sub_scores
        flags[rows] = sub_flags

    tp = fp = fn = tn = 0
    for row, record in enumerate(test_manifest):
        if record.is_malicious:
            tp, fn = (tp + 1, fn) if flags[row] else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if flags[row] else (fp, tn + 1)
    return DetectionOutcome(
        counts=DetectionCounts(tp=tp, fp=fp, fn=fn, tn=tn),
        scores=scores,
        flags=flags,
        cluster_models=cluster_models,
        warnings=warnings,
    )


def run_detect(config: RunConfig) -> dict:
    """Split, cluster the training apps, train per-cluster one-class SVMs
    on sensitive-API bits, then score the benign+malware test set."""
    config.validate()
    timer = StageTimer()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not config.features_dir:
        raise ConfigError("detect needs --features-dir with extracted API features")
    manifest = load_manifest(config.manifest_path)
    features_by_id = load_features_dir(config.features_dir)

    timer.start("split")
    split = stratified_split(manifest, config.train_fraction, config.seed)
    split.save(out_dir / "split.json")
    train_manifest = manifest.subset(split.train)
    if config.malware_manifest_path:
        malware = load_manifest(config.malware_manifest_path)
        test_manifest = merge_malware(manifest, split.test, malware)
    else:
        test_manifest = manifest.subset(split.test)
    timer.stop("split")

    timer.start("cluster_train")
    featurizer = Featurizer(config)
    train_matrix = featurizer.fit_transform(train_manifest, features_by_id)
    kmeans = kmeans_fit(
        train_matrix, k=config.k, seed=config.seed, restarts=config.restarts
    )
    train_partition = kmeans_assign(kmeans, train_matrix)
    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    kmeans.save(models_dir / "kmeans.json")
    featurizer.save(models_dir / "featurizer.json")
    train_partition.save_csv(out_dir / "train_partition.csv")
    timer.stop("cluster_train")

    timer.start("score_test")
    test_matrix = featurizer.transform(test_manifest, features_by_id)
    test_partition = kmeans_assign(kmeans, test_matrix)
    test_partition.save_csv(out_dir / "test_partition.csv")
    outcome = detect_with_partitions(
        train_manifest,
        test_manifest,
        features_by_id,
        train_partition,
        test_partition,
        config,
    )
    warnings = outcome.warnings
    for cluster_id, model in outcome.cluster_models.items():
        model.save(models_dir / f"ocsvm_{cluster_id}.json")

    score_lines = ["app_id,cluster_id,score,is_anomaly,is_malicious"]
    for row, record in enumerate(test_manifest):
        score_lines.append(
            f"{record.app_id},{test_partition.assignments[record.app_id]},"
            f"{float(outcome.scores[row])!r},{int(bool(outcome.flags[row]))},"
            f"{int(record.is_malicious)}"
        )
    (out_dir / "scores.csv").write_text("\n".join(score_lines) + "\n", "utf-8")
    timer.stop("score_test")

    counts = outcome.counts
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    try:
        rates = detection_metrics(counts).as_dict()
    except UndefinedRateError as exc:
        warnings.append(f"degenerate test composition: {exc}; rates partial, f1=0")
        rates = {
            "tn_rate": tn / (tn + fp) if tn + fp else None,
            "fp_rate": fp / (tn + fp) if tn + fp else None,
            "fn_rate": fn / (tp + fn) if tp + fn else None,
            "tp_rate": tp / (tp + fn) if tp + fn else None,
            "f1": 0.0,
        }

    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "tool_version": __version__,
        "task": "detect",
        "config": config.as_dict(),
        "split": {
            "n_train": len(split.train),
            "n_test_benign": len(split.test),
            "n_test_malicious": test_manifest.n_malicious,
        },
        "detection": {
            "counts": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
            "rates": rates,
        },
        "warnings": sorted(warnings),
    }
    _write_json(out_dir / "report.json", report)
    timer.save(out_dir)
    return report


# -- evaluate / report ----------------------------------------------------------


def run_evaluate(
    partition_path: str | Path,
    against_partition: str | Path | None = None,
    against_manifest: str | Path | None = None,
) -> dict:
    """ARI between a partition CSV and either another CSV or manifest labels."""
    if (against_partition is None) == (against_manifest is None):
        raise ConfigError(
            "evaluate needs exactly one of --against-partition / --against-manifest"
        )
    left = Partition.load_csv(partition_path)
    if against_partition is not None:
        right = Partition.load_csv(against_partition)
        against = str(against_partition)
    else:
        right = _labels_partition(load_manifest(against_manifest))
        against = str(against_manifest)
    return {
        "partition": str(partition_path),
        "against": against,
        "n": left.n,
        "ari": adjusted_rand_index(left, right),
    }


def run_report(report_paths: list[str | Path], csv_out: str | Path) -> int:
    """Flatten (configuration, ARI) rows from report JSONs into one CSV."""
    rows: list[tuple[str, float]] = []
    for path in report_paths:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
        for name, value in payload.get("ari", {}).items():
            rows.append((name, float(value)))
    _write_ari_csv(Path(csv_out), rows)
    return len(rows)
