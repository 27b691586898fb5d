"""The six static feature groups extracted from an APK: app name,
permissions, restricted API call sites, strings, icon descriptor, and
library prefixes.

Each public extractor opens its own handle on the archive; extract_all
shares one pass over the parsed DEX/manifest and degrades per field when
a section of the archive is corrupt, so one broken resource never sinks
a batch run.
"""

from __future__ import annotations

import json
import lzma
import re
import zipfile
import zlib
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .axml import TYPE_STRING, AxmlDocument, parse_axml
from .dex import DexFile, descriptor_to_dotted
from .icon import icon_descriptor_from_zip
from .parsing import ApkParseError, NotAZipError

_DEX_NAME_RE = re.compile(r"classes\d*\.dex")
_API_SIGNATURE_RE = re.compile(r"[A-Za-z_$][\w$.]*\.[A-Za-z_$<][\w$>]*")
_PERMISSION_RE = re.compile(r"[A-Za-z_][\w.]*")

FEATURE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PermissionApiMap:
    """api signature -> protecting permission, loaded from CSV."""

    entries: dict[str, str]

    @property
    def signatures(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load_csv(cls, path: str | Path) -> "PermissionApiMap":
        return cls._parse(Path(path).read_text(encoding="utf-8"), str(path))

    @classmethod
    def bundled(cls) -> "PermissionApiMap":
        text = (
            importlib_resources.files("appcat.resources")
            .joinpath("sensitive_apis.csv")
            .read_text("utf-8")
        )
        return cls._parse(text, "bundled sensitive_apis.csv")

    @classmethod
    def _parse(cls, text: str, source: str) -> "PermissionApiMap":
        entries: dict[str, str] = {}
        for line_no, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{source} line {line_no}: expected 2 columns")
            signature, permission = parts[0].strip(), parts[1].strip()
            if not _API_SIGNATURE_RE.fullmatch(signature):
                raise ValueError(
                    f"{source} line {line_no}: bad api signature {signature!r}"
                )
            if not _PERMISSION_RE.fullmatch(permission):
                raise ValueError(
                    f"{source} line {line_no}: bad permission {permission!r}"
                )
            if signature in entries:
                raise ValueError(
                    f"{source} line {line_no}: duplicate signature {signature!r}"
                )
            entries[signature] = permission
        return cls(entries=entries)


def load_library_prefixes(path: str | Path | None = None) -> tuple[str, ...]:
    if path is None:
        text = (
            importlib_resources.files("appcat.resources")
            .joinpath("library_prefixes.txt")
            .read_text("utf-8")
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    prefixes = [
        line.strip()
        for line in text.splitlines()
        if line.strip() and not line.strip().startswith("#")
    ]
    return tuple(sorted(set(prefixes)))


@dataclass(frozen=True)
class ManifestFacts:
    package: str | None
    permissions: frozenset[str]
    label: str | None
    label_is_reference: bool
    components: tuple[str, ...]


@dataclass(frozen=True)
class ApkFeatures:
    app_name: str
    permissions: frozenset[str]
    restricted_apis: dict[str, int]
    strings: frozenset[str]
    icon_descriptor: np.ndarray
    libraries: frozenset[str]
    warnings: tuple[str, ...] = ()

    def to_json_obj(self, app_id: str) -> dict:
        return {
            "format_version": FEATURE_FORMAT_VERSION,
            "app_id": app_id,
            "app_name": self.app_name,
            "permissions": sorted(self.permissions),
            "restricted_apis": dict(sorted(self.restricted_apis.items())),
            "strings": sorted(self.strings),
            "icon_descriptor": [float(v) for v in self.icon_descriptor],
            "libraries": sorted(self.libraries),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ApkFeatures":
        return cls(
            app_name=str(obj["app_name"]),
            permissions=frozenset(obj["permissions"]),
            restricted_apis={str(k): int(v) for k, v in obj["restricted_apis"].items()},
            strings=frozenset(obj["strings"]),
            icon_descriptor=np.asarray(obj["icon_descriptor"], dtype=np.float64),
            libraries=frozenset(obj["libraries"]),
            warnings=tuple(obj.get("warnings", ())),
        )


def save_features(features: ApkFeatures, app_id: str, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(features.to_json_obj(app_id), sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_features(path: str | Path) -> tuple[str, ApkFeatures]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return str(obj["app_id"]), ApkFeatures.from_json_obj(obj)


def _open_apk(apk: str | Path) -> zipfile.ZipFile:
    try:
        return zipfile.ZipFile(apk, "r")
    except (
        zipfile.BadZipFile,
        OSError,
        NotImplementedError,  # unsupported zip versions/compression
        ValueError,
        RuntimeError,
        EOFError,
        zlib.error,
        lzma.LZMAError,
    ) as exc:
        raise NotAZipError(f"{apk}: not a readable ZIP archive ({exc})") from exc


def _read_entry(zf: zipfile.ZipFile, name: str) -> bytes:
    try:
        return zf.read(name)
    except KeyError:
        raise ApkParseError(f"archive has no entry {name!r}") from None
    except (
        zipfile.BadZipFile,
        zlib.error,
        lzma.LZMAError,
        OSError,
        NotImplementedError,
        RuntimeError,  # encrypted entries
        ValueError,
        EOFError,  # truncated entry data
    ) as exc:
        raise ApkParseError(f"entry {name!r} is unreadable: {exc}") from exc


def _manifest_facts(document: AxmlDocument) -> ManifestFacts:
    package: str | None = None
    permissions: set[str] = set()
    label: str | None = None
    label_is_reference = False
    components: list[str] = []
    for element in document.elements:
        if element.name == "manifest":
            attr = element.attr("package", namespace=None)
            if attr is not None and attr.string_value:
                package = attr.string_value
        elif element.name == "uses-permission":
            attr = element.attr("name")
            if attr is not None and attr.data_type == TYPE_STRING and attr.string_value:
                permissions.add(attr.string_value)
        elif element.name == "application":
            attr = element.attr("label")
            if attr is None:
                continue
            if attr.data_type == TYPE_STRING:
                label = attr.string_value
            elif attr.is_reference:
                label_is_reference = True
        elif element.name in ("activity", "service", "receiver", "provider"):
            attr = element.attr("name")
            if attr is not None and attr.data_type == TYPE_STRING and attr.string_value:
                components.append(attr.string_value)
    return ManifestFacts(
        package=package,
        permissions=frozenset(permissions),
        label=label,
        label_is_reference=label_is_reference,
        components=tuple(components),
    )


def parse_manifest(apk: str | Path) -> ManifestFacts:
    """Decode AndroidManifest.xml: package, permissions, label, components."""
    with _open_apk(apk) as zf:
        if "AndroidManifest.xml" not in zf.namelist():
            raise ApkParseError(f"{apk}: archive has no AndroidManifest.xml")
        data = _read_entry(zf, "AndroidManifest.xml")
    return _manifest_facts(parse_axml(data))


def _parse_dex_files(zf: zipfile.ZipFile, apk: str | Path) -> list[DexFile]:
    names = sorted(n for n in zf.namelist() if _DEX_NAME_RE.fullmatch(n))
    if not names:
        raise ApkParseError(f"{apk}: archive has no classes*.dex entry")
    return [DexFile.parse(_read_entry(zf, name), name=name) for name in names]


def extract_dex_strings(apk: str | Path) -> set[str]:
    """Union of the string pools across every DEX in the archive.

    Entries that decode with an embedded NUL are binary blobs, not text,
    and are dropped.
    """
    with _open_apk(apk) as zf:
        dex_files = _parse_dex_files(zf, apk)
    out: set[str] = set()
    for dex in dex_files:
        out.update(s for s in dex.strings if "\x00" not in s)
    return out


def extract_restricted_apis(
    apk: str | Path, api_map: PermissionApiMap
) -> dict[str, int]:
    """Call-site counts of the mapped sensitive APIs across all DEX files."""
    wanted = frozenset(api_map.entries)
    with _open_apk(apk) as zf:
        dex_files = _parse_dex_files(zf, apk)
    counts: dict[str, int] = {}
    for dex in dex_files:
        for signature, count in dex.restricted_api_counts(wanted).items():
            counts[signature] = counts.get(signature, 0) + count
    return counts


def _libraries_from_dex(
    dex_files: Iterable[DexFile], prefixes: Iterable[str]
) -> frozenset[str]:
    prefix_list = list(prefixes)
    found: set[str] = set()
    for dex in dex_files:
        for descriptor in dex.type_descriptors:
            dotted = descriptor_to_dotted(descriptor)
            if dotted is None:
                continue
            for prefix in prefix_list:
                if prefix in found:
                    continue
                if dotted == prefix or dotted.startswith(prefix + "."):
                    found.add(prefix)
    return frozenset(found)


def detect_libraries(apk: str | Path, known_prefixes: Iterable[str]) -> frozenset[str]:
    """Known library prefixes with at least one class in the DEX type pool."""
    with _open_apk(apk) as zf:
        dex_files = _parse_dex_files(zf, apk)
    return _libraries_from_dex(dex_files, known_prefixes)


def icon_descriptor(apk: str | Path) -> np.ndarray:
    """112-dim launcher-icon descriptor; zero vector when absent."""
    with _open_apk(apk) as zf:
        vector, _ = icon_descriptor_from_zip(zf)
    return vector


def _app_name(
    facts: ManifestFacts | None, fallback_name: str | None, apk: str | Path
) -> str:
    if facts is not None and facts.label:
        return facts.label
    if fallback_name:
        return fallback_name
    if facts is not None and facts.package:
        return facts.package.rsplit(".", 1)[-1]
    return Path(apk).stem


def extract_all(
    apk: str | Path,
    api_map: PermissionApiMap,
    known_prefixes: Iterable[str],
    fallback_name: str | None = None,
) -> ApkFeatures:
    """All six feature groups in one pass over the archive.

    Only an unreadable archive is fatal; a corrupt manifest, DEX, or
    icon degrades that field to its empty value and appends a warning.
    When the manifest label is a resource reference, the name falls back
    to ``fallback_name`` (the dataset title) and then to the final
    package segment.
    """
    warnings: list[str] = []
    with _open_apk(apk) as zf:
        facts: ManifestFacts | None = None
        try:
            if "AndroidManifest.xml" not in zf.namelist():
                raise ApkParseError("archive has no AndroidManifest.xml")
            facts = _manifest_facts(parse_axml(_read_entry(zf, "AndroidManifest.xml")))
            if facts.label_is_reference:
                warnings.append("label is a resource reference; using fallback name")
        except ApkParseError as exc:
            warnings.append(f"manifest: {exc}")

        dex_files: list[DexFile] = []
        try:
            dex_files = _parse_dex_files(zf, apk)
        except ApkParseError as exc:
            warnings.append(f"dex: {exc}")

        vector, icon_warning = icon_descriptor_from_zip(zf)
        if icon_warning:
            warnings.append(f"icon: {icon_warning}")

    strings: set[str] = set()
    restricted: dict[str, int] = {}
    wanted = frozenset(api_map.entries)
    for dex in dex_files:
        strings.update(s for s in dex.strings if "\x00" not in s)
        for signature, count in dex.restricted_api_counts(wanted).items():
            restricted[signature] = restricted.get(signature, 0) + count

    return ApkFeatures(
        app_name=_app_name(facts, fallback_name, apk),
        permissions=facts.permissions if facts is not None else frozenset(),
        restricted_apis=restricted,
        strings=frozenset(strings),
        icon_descriptor=vector,
        libraries=_libraries_from_dex(dex_files, known_prefixes),
        warnings=tuple(warnings),
    )
