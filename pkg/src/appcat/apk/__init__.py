"""Static APK feature extraction: manifest, DEX, icon, and libraries."""

from .features import (
    ApkFeatures,
    ManifestFacts,
    PermissionApiMap,
    detect_libraries,
    extract_all,
    extract_dex_strings,
    extract_restricted_apis,
    icon_descriptor,
    load_features,
    load_library_prefixes,
    parse_manifest,
    save_features,
)
from .parsing import ApkParseError, NotAZipError

__all__ = [
    "ApkFeatures",
    "ApkParseError",
    "ManifestFacts",
    "NotAZipError",
    "PermissionApiMap",
    "detect_libraries",
    "extract_all",
    "extract_dex_strings",
    "extract_restricted_apis",
    "icon_descriptor",
    "load_features",
    "load_library_prefixes",
    "parse_manifest",
    "save_features",
]
