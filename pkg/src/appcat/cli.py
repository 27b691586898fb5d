"""Command-line entry point.

Subcommands: extract, categorize, assign, detect, evaluate, report.
Flags mirror RunConfig; ``--config FILE`` (JSON) may supply any of them,
with explicit flags winning on conflict.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 convergence error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .anomaly import ConvergenceError
from .apk.parsing import ApkParseError
from .dataset import ManifestError
from .embed import EmbeddingError
from .metrics import PartitionMismatchError, UndefinedRateError
from .pipeline import (
    APK_FEATURE_GROUPS,
    ConfigError,
    DataError,
    DESCRIPTION_GROUP,
    RunConfig,
    load_config_file,
    run_assign,
    run_categorize,
    run_detect,
    run_evaluate,
    run_extract,
    run_report,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


def _add_config_flags(parser: argparse.ArgumentParser, *, needs_manifest: bool) -> None:
    parser.add_argument("--config", help="JSON file supplying any of the flags below")
    parser.add_argument(
        "--manifest", dest="manifest_path", required=False,
        help="JSON-lines app manifest" + (" (required)" if needs_manifest else ""),
    )
    parser.add_argument("--output-dir", dest="output_dir", help="run output directory")
    parser.add_argument("--cache-dir", dest="cache_dir", help="embedding cache directory")
    parser.add_argument(
        "--features-dir", dest="features_dir",
        help="directory of per-app feature JSON files",
    )
    parser.add_argument(
        "--provider", choices=["offline", "remote"],
        help="embedding provider (default offline)",
    )
    parser.add_argument("--api-key-env", dest="api_key_env",
                        help="env var holding the remote API key")
    parser.add_argument("--model", help="remote embedding model name")
    parser.add_argument("--base-url", dest="base_url", help="remote API base URL")
    parser.add_argument(
        "--features", nargs="+",
        help=f"'{DESCRIPTION_GROUP}' or any subset of: {' '.join(APK_FEATURE_GROUPS)}",
    )
    parser.add_argument("--k", type=int, help="cluster count (default 50)")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--restarts", type=int, help="k-means restarts (default 4)")
    parser.add_argument("--train-fraction", dest="train_fraction", type=float,
                        help="per-class train share (default 0.9)")
    parser.add_argument("--nu", type=float, help="one-class SVM nu (default 0.1)")
    parser.add_argument("--kernel", choices=["rbf", "linear"], help="SVM kernel")
    parser.add_argument("--gamma", type=float, help="rbf gamma (default 1/dim)")
    parser.add_argument("--pca-variance", dest="pca_variance", type=float,
                        help="PCA retained-variance target (default 0.95)")
    parser.add_argument("--min-token-len", dest="min_token_len", type=int,
                        help="minimum token length in preprocessing (default 2)")
    parser.add_argument("--malware-manifest", dest="malware_manifest_path",
                        help="JSON-lines manifest of malware apps for the test set")
    parser.add_argument("--api-map", dest="api_map_path",
                        help="CSV of api_signature,permission (default: bundled map)")
    parser.add_argument("--library-prefixes", dest="library_prefixes_path",
                        help="text file of known library prefixes (default: bundled)")


def _build_config(args: argparse.Namespace, *, needs_manifest: bool) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    field_names = {f.name for f in fields(RunConfig)}
    for name in field_names:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = tuple(flag_value) if name == "features" else flag_value
    config = RunConfig(**values)
    if needs_manifest and not config.manifest_path:
        raise ConfigError("a manifest is required (--manifest or config file)")
    config.validate()
    return config


def _cmd_extract(args: argparse.Namespace) -> int:
    result = run_extract(_build_config(args, needs_manifest=True))
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_categorize(args: argparse.Namespace) -> int:
    report = run_categorize(_build_config(args, needs_manifest=True))
    for name, value in report["ari"].items():
        print(f"ari[{name}] = {value:.4f}")
    return EXIT_OK


def _cmd_assign(args: argparse.Namespace) -> int:
    result = run_assign(
        _build_config(args, needs_manifest=True), models_dir=args.models_dir
    )
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_detect(args: argparse.Namespace) -> int:
    report = run_detect(_build_config(args, needs_manifest=True))
    detection = report["detection"]
    print(json.dumps(detection, sort_keys=True, indent=2))
    for warning in report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    result = run_evaluate(
        args.partition,
        against_partition=args.against_partition,
        against_manifest=args.against_manifest,
    )
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    count = run_report(args.reports, args.csv_out)
    print(f"wrote {count} rows to {args.csv_out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="appcat",
        description="Android app categorization and anomaly-detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract APK feature files for a manifest")
    _add_config_flags(p, needs_manifest=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("categorize", help="cluster apps and score ARI vs labels")
    _add_config_flags(p, needs_manifest=True)
    p.set_defaults(func=_cmd_categorize)

    p = sub.add_parser("assign", help="assign apps to a saved clustering")
    _add_config_flags(p, needs_manifest=True)
    p.add_argument("--models-dir", dest="models_dir",
                   help="directory with kmeans.json and featurizer.json")
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("detect", help="train per-cluster OC-SVMs and score the test set")
    _add_config_flags(p, needs_manifest=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="ARI between partitions")
    p.add_argument("partition", help="partition CSV to evaluate")
    p.add_argument("--against-partition", help="reference partition CSV")
    p.add_argument("--against-manifest", help="manifest whose labels are the reference")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="flatten report JSONs into a plot-ready CSV")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--csv-out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (
        DataError,
        ManifestError,
        ApkParseError,
        PartitionMismatchError,
        UndefinedRateError,
        EmbeddingError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
