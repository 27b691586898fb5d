"""appcat: Android app categorization and per-cluster anomaly detection."""

__version__ = "0.1.0"

from .dataset import (
    AppRecord,
    Manifest,
    ManifestError,
    Split,
    load_manifest,
    merge_malware,
    save_manifest,
    stratified_split,
)
from .metrics import (
    ContingencyTable,
    DetectionCounts,
    DetectionRates,
    Partition,
    PartitionMismatchError,
    UndefinedRateError,
    adjusted_rand_index,
    contingency_table,
    detection_metrics,
)

__all__ = [
    "AppRecord",
    "ContingencyTable",
    "DetectionCounts",
    "DetectionRates",
    "Manifest",
    "ManifestError",
    "Partition",
    "PartitionMismatchError",
    "Split",
    "UndefinedRateError",
    "__version__",
    "adjusted_rand_index",
    "contingency_table",
    "detection_metrics",
    "load_manifest",
    "merge_malware",
    "save_manifest",
    "stratified_split",
]
