import json
import random
from pathlib import Path

import pytest

from apkforge import build_apk, build_axml_manifest, build_dex, build_png
from appcat.dataset import (
    AppRecord,
    Manifest,
    load_manifest,
    merge_malware,
    save_manifest,
    stratified_split,
)
from appcat.metrics import Partition, detection_metrics
from appcat.pipeline import (
    ConfigError,
    DataError,
    Featurizer,
    RunConfig,
    detect_with_partitions,
    load_config_file,
    load_features_dir,
    run_assign,
    run_categorize,
    run_detect,
    run_evaluate,
    run_extract,
    run_report,
)
from synthcorpus import save_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("corpus")
    return save_corpus(tmp, n_classes=6, per_class=10, seed=3, with_malware=12)


def desc_config(corpus, out_dir, **overrides) -> RunConfig:
    values = dict(
        manifest_path=corpus["manifest"],
        output_dir=str(out_dir),
        cache_dir=str(Path(out_dir) / "cache"),
        features=("description",),
        k=6,
        seed=0,
    )
    values.update(overrides)
    return RunConfig(**values)


class TestRunConfig:
    def test_validate_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            RunConfig(provider="carrier-pigeon").validate()
        with pytest.raises(ConfigError):
            RunConfig(features=()).validate()
        with pytest.raises(ConfigError):
            RunConfig(features=("description", "icon")).validate()
        with pytest.raises(ConfigError):
            RunConfig(features=("unknown-group",)).validate()
        with pytest.raises(ConfigError):
            RunConfig(nu=0.0).validate()

    def test_config_file_unknown_key(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"k": 5, "something_else": 1}))
        with pytest.raises(ConfigError, match="somethin"):
            load_config_file(path)

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"k": 5, "features": ["strings"], "nu": 0.2}))
        values = load_config_file(path)
        config = RunConfig(**values)
        assert config.k == 5
        assert config.features == ("strings",)
        assert config.nu == 0.2

    def test_mode(self):
        assert RunConfig(features=("description",)).mode == "description"
        assert RunConfig(features=("strings", "icon")).mode == "apk"


class TestExtract:
    def make_manifest_with_apks(self, tmp_path, corrupt_one=False):
        rows = []
        for i in range(3):
            apk_path = tmp_path / "apks" / f"app{i}.apk"
            if corrupt_one and i == 1:
                apk_path.parent.mkdir(parents=True, exist_ok=True)
                apk_path.write_bytes(b"not a zip at all")
            else:
                build_apk(
                    apk_path,
                    manifest=build_axml_manifest(
                        package=f"com.fix.app{i}",
                        permissions=("android.permission.INTERNET",),
                        label=f"Fixture {i}",
                    ),
                    dex_files=(build_dex(content_strings=(f"word{i}",)),),
                    icon=build_png((16, 16), (i * 40, 100, 200)),
                )
            rows.append(
                AppRecord(
                    app_id=f"com.fix.app{i}",
                    class_label="Fixture",
                    description=f"fixture {i}",
                    apk_path=str(apk_path),
                )
            )
        manifest_path = tmp_path / "manifest.jsonl"
        save_manifest(Manifest(tuple(rows)), manifest_path)
        return manifest_path

    def test_batch_fan_out(self, tmp_path):
        manifest_path = self.make_manifest_with_apks(tmp_path)
        config = RunConfig(
            manifest_path=str(manifest_path), output_dir=str(tmp_path / "out")
        )
        result = run_extract(config)
        assert result["written"] == 3
        assert result["failed"] == []
        files = sorted(Path(result["features_dir"]).glob("*.json"))
        assert len(files) == 3

    def test_corrupt_apk_logged_not_fatal(self, tmp_path):
        manifest_path = self.make_manifest_with_apks(tmp_path, corrupt_one=True)
        config = RunConfig(
            manifest_path=str(manifest_path), output_dir=str(tmp_path / "out")
        )
        result = run_extract(config)
        assert result["written"] == 2
        assert len(result["failed"]) == 1
        assert result["failed"][0]["app_id"] == "com.fix.app1"

    def test_rerun_byte_stable(self, tmp_path):
        manifest_path = self.make_manifest_with_apks(tmp_path)
        config = RunConfig(
            manifest_path=str(manifest_path), output_dir=str(tmp_path / "out")
        )
        run_extract(config)
        features_dir = Path(tmp_path / "out" / "features")
        before = {p.name: p.read_bytes() for p in features_dir.glob("*.json")}
        run_extract(config)
        after = {p.name: p.read_bytes() for p in features_dir.glob("*.json")}
        assert before == after

    def test_all_failures_is_error(self, tmp_path):
        rows = (
            AppRecord(app_id="com.none", class_label="X", apk_path="missing.apk"),
        )
        manifest_path = tmp_path / "m.jsonl"
        save_manifest(Manifest(rows), manifest_path)
        config = RunConfig(
            manifest_path=str(manifest_path), output_dir=str(tmp_path / "out")
        )
        with pytest.raises(DataError, match="every row failed"):
            run_extract(config)


class TestCategorize:
    def test_description_mode_recovers_classes(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        report = run_categorize(config)
        (name, ari), = report["ari"].items()
        assert name == "description+offline"
        assert ari >= 0.9
        out = Path(config.output_dir)
        assert (out / "partition.csv").exists()
        assert (out / "models" / "kmeans.json").exists()
        assert (out / "models" / "featurizer.json").exists()
        assert (out / "ari.csv").read_text().startswith("configuration,ari")

    def test_rerun_byte_identical(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        run_categorize(config)
        out = Path(config.output_dir)
        partition = (out / "partition.csv").read_bytes()
        report = (out / "report.json").read_bytes()
        run_categorize(config)
        assert (out / "partition.csv").read_bytes() == partition
        assert (out / "report.json").read_bytes() == report

    def test_missing_description_names_app(self, corpus, tmp_path):
        manifest = load_manifest(corpus["manifest"])
        broken = Manifest(
            manifest.records[:3]
            + (AppRecord(app_id="com.blank", class_label="class00"),)
        )
        path = tmp_path / "broken.jsonl"
        save_manifest(broken, path)
        config = desc_config(corpus, tmp_path / "run", manifest_path=str(path), k=2)
        with pytest.raises(DataError, match="com.blank"):
            run_categorize(config)

    def test_apk_mode_single_group(self, corpus, tmp_path):
        config = desc_config(
            corpus,
            tmp_path / "apkrun",
            features=("apis",),
            features_dir=corpus["features_dir"],
        )
        report = run_categorize(config)
        (_, ari), = report["ari"].items()
        # API bit patterns are class-coherent by construction.
        assert ari >= 0.9

    def test_apk_mode_combined_groups(self, corpus, tmp_path):
        config = desc_config(
            corpus,
            tmp_path / "combo",
            features=("name", "apis", "strings", "icon"),
            features_dir=corpus["features_dir"],
        )
        report = run_categorize(config)
        assert "name+apis+strings+icon" in report["ari"]

    def test_apk_mode_needs_features_dir(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "x", features=("strings",))
        with pytest.raises(ConfigError, match="features-dir"):
            run_categorize(config)


class TestAssign:
    def test_round_trip_against_training_partition(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        run_categorize(config)
        result = run_assign(config)
        assignment = Partition.load_csv(result["path"])
        training = Partition.load_csv(Path(config.output_dir) / "partition.csv")
        assert assignment.assignments == training.assignments

    def test_provider_mismatch_rejected(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        run_categorize(config)
        remote = desc_config(corpus, tmp_path / "run", provider="remote")
        with pytest.raises(ConfigError, match="provider"):
            run_assign(remote)

    def test_missing_models(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "empty")
        with pytest.raises(DataError, match="no saved clustering"):
            run_assign(config)


class TestDetect:
    def test_full_run_report(self, corpus, tmp_path):
        config = desc_config(
            corpus,
            tmp_path / "detect",
            features_dir=corpus["features_dir"],
            malware_manifest_path=corpus["malware_manifest"],
            nu=0.1,
        )
        report = run_detect(config)
        counts = report["detection"]["counts"]
        rates = report["detection"]["rates"]
        assert counts["tp"] + counts["fn"] == 12
        assert counts["tn"] + counts["fp"] == 6  # one held-out app per class
        assert rates["tp_rate"] == pytest.approx(
            counts["tp"] / 12
        )
        expected_f1 = counts["tp"] / (
            counts["tp"] + 0.5 * (counts["fp"] + counts["fn"])
        )
        assert rates["f1"] == pytest.approx(expected_f1)
        out = Path(config.output_dir)
        assert (out / "split.json").exists()
        assert (out / "scores.csv").exists()
        assert (out / "test_partition.csv").exists()
        assert sorted(p.name for p in (out / "models").glob("ocsvm_*.json"))

    def test_benign_only_degenerate_composition(self, corpus, tmp_path):
        config = desc_config(
            corpus,
            tmp_path / "benign-only",
            features_dir=corpus["features_dir"],
            nu=0.1,
        )
        report = run_detect(config)
        assert report["detection"]["counts"]["tp"] == 0
        assert report["detection"]["rates"]["f1"] == 0.0
        assert any("degenerate" in w for w in report["warnings"])

    def test_missing_cluster_model(self, corpus, tmp_path):
        manifest = load_manifest(corpus["manifest"])
        features = load_features_dir(corpus["features_dir"])
        split = stratified_split(manifest, 0.9, 1)
        train = manifest.subset(split.train)
        test = manifest.subset(split.test)
        train_partition = Partition.from_labels(
            [r.app_id for r in train], [r.class_label for r in train]
        )
        rogue = Partition.from_labels(
            [r.app_id for r in test], ["not-a-cluster"] * len(test)
        )
        config = desc_config(corpus, tmp_path / "x")
        with pytest.raises(DataError, match="not-a-cluster"):
            detect_with_partitions(
                train, test, features, train_partition, rogue, config
            )

    def test_aligned_beats_random_partitions(self, corpus, tmp_path):
        manifest = load_manifest(corpus["manifest"])
        malware = load_manifest(corpus["malware_manifest"])
        features = load_features_dir(corpus["features_dir"])
        homes = corpus["malware_homes"]
        config = desc_config(corpus, tmp_path / "x", nu=0.1)
        split = stratified_split(manifest, 0.9, 3)
        train = manifest.subset(split.train)
        test = merge_malware(manifest, split.test, malware)
        aligned_train = Partition.from_labels(
            [r.app_id for r in train], [r.class_label for r in train]
        )
        aligned_test = Partition.from_labels(
            [r.app_id for r in test],
            [
                r.class_label if not r.is_malicious else f"class{homes[r.app_id]:02d}"
                for r in test
            ],
        )
        aligned = detect_with_partitions(
            train, test, features, aligned_train, aligned_test, config
        )
        rng = random.Random(99)
        k = len(manifest.class_set)
        random_train = Partition.from_labels(
            [r.app_id for r in train], [str(rng.randrange(k)) for _ in train.records]
        )
        random_test = Partition.from_labels(
            [r.app_id for r in test], [str(rng.randrange(k)) for _ in test.records]
        )
        randomized = detect_with_partitions(
            train, test, features, random_train, random_test, config
        )
        aligned_f1 = detection_metrics(aligned.counts).f1
        random_f1 = detection_metrics(randomized.counts).f1
        assert aligned_f1 >= random_f1


class TestEvaluateAndReport:
    def test_self_agreement(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        run_categorize(config)
        partition = Path(config.output_dir) / "partition.csv"
        result = run_evaluate(partition, against_partition=partition)
        assert result["ari"] == 1.0

    def test_against_manifest_labels(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        report = run_categorize(config)
        partition = Path(config.output_dir) / "partition.csv"
        result = run_evaluate(partition, against_manifest=corpus["manifest"])
        (_, ari), = report["ari"].items()
        assert result["ari"] == pytest.approx(ari)

    def test_exactly_one_reference_required(self, corpus, tmp_path):
        with pytest.raises(ConfigError):
            run_evaluate(tmp_path / "p.csv")

    def test_report_csv(self, corpus, tmp_path):
        config = desc_config(corpus, tmp_path / "run")
        run_categorize(config)
        report_path = Path(config.output_dir) / "report.json"
        csv_out = tmp_path / "all.csv"
        rows = run_report([report_path], csv_out)
        assert rows == 1
        text = csv_out.read_text()
        assert text.splitlines()[0] == "configuration,ari"
        assert text.splitlines()[1].startswith("description+offline,")


class TestFeaturizerPersistence:
    def test_save_load_transform_equivalence(self, corpus, tmp_path):
        manifest = load_manifest(corpus["manifest"])
        features = load_features_dir(corpus["features_dir"])
        config = desc_config(
            corpus,
            tmp_path / "x",
            features=("apis", "strings", "icon"),
            features_dir=corpus["features_dir"],
        )
        featurizer = Featurizer(config)
        original = featurizer.fit_transform(manifest, features)
        path = tmp_path / "featurizer.json"
        featurizer.save(path)
        restored = Featurizer.load(path, config)
        again = restored.transform(manifest, features)
        assert original.row_ids == again.row_ids
        assert (abs(original.data - again.data)).max() < 1e-12
