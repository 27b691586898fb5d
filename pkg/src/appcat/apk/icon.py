"""Launcher-icon descriptor: an 8x8 grayscale downsample concatenated
with per-channel 16-bin RGB histograms, L2-normalized (112 dims total).

A deterministic image-statistics descriptor stands in for a trained
icon-embedding network: it preserves an icon-similarity signal without a
model dependency. Missing or undecodable icons degrade to the zero
vector with a warning rather than failing the app.
"""

from __future__ import annotations

import io
import lzma
import re
import zipfile
import zlib

import numpy as np
from PIL import Image, UnidentifiedImageError

# Everything a mutated archive or icon can throw while reading and
# decoding one candidate; any of these degrades to the next candidate.
_DECODE_ERRORS = (
    UnidentifiedImageError,
    Image.DecompressionBombError,
    ValueError,
    OSError,
    zipfile.BadZipFile,
    zlib.error,
    lzma.LZMAError,
    NotImplementedError,
    RuntimeError,
    EOFError,
)

ICON_DIM = 112
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

_CANDIDATE_PATTERNS = (
    re.compile(r"res/mipmap[^/]*/ic_launcher[^/]*\.png$"),
    re.compile(r"res/drawable[^/]*/ic_launcher[^/]*\.png$"),
    re.compile(r"res/.*icon[^/]*\.png$"),
)


def iter_icon_candidates(names: list[str]) -> list[str]:
    """PNG entries that look like launcher icons, most specific first."""
    out: list[str] = []
    for pattern in _CANDIDATE_PATTERNS:
        matches = sorted(n for n in names if pattern.fullmatch(n) and n not in out)
        out.extend(matches)
    return out


MAX_ICON_PIXELS = 16_000_000  # refuse to decode anything bigger


def descriptor_from_png(data: bytes) -> np.ndarray:
    """112-dim descriptor of one PNG image; raises on undecodable input."""
    if not data.startswith(_PNG_SIGNATURE):
        raise ValueError("not a PNG file")
    with Image.open(io.BytesIO(data)) as img:
        width, height = img.size
        if width * height > MAX_ICON_PIXELS:
            raise ValueError(f"icon of {width}x{height} pixels is implausibly large")
        rgb = img.convert("RGB")
    gray = np.asarray(
        rgb.convert("L").resize((8, 8), Image.BILINEAR), dtype=np.float64
    )
    block = (gray / 255.0).ravel()
    pixels = np.asarray(rgb, dtype=np.uint8).reshape(-1, 3)
    histograms = []
    for channel in range(3):
        hist, _ = np.histogram(pixels[:, channel], bins=16, range=(0, 256))
        histograms.append(hist.astype(np.float64) / pixels.shape[0])
    descriptor = np.concatenate([block] + histograms)
    norm = float(np.linalg.norm(descriptor))
    if norm > 0.0:
        descriptor /= norm
    return descriptor


def icon_descriptor_from_zip(zf: zipfile.ZipFile) -> tuple[np.ndarray, str | None]:
    """Descriptor of the first decodable icon candidate.

    Returns (vector, warning); the vector is all-zero when no candidate
    exists or none decodes, with the warning explaining why.
    """
    candidates = iter_icon_candidates(zf.namelist())
    if not candidates:
        return np.zeros(ICON_DIM, dtype=np.float64), "no launcher icon found"
    last_error = ""
    for name in candidates:
        try:
            data = zf.read(name)
            return descriptor_from_png(data), None
        except _DECODE_ERRORS as exc:
            last_error = f"{name}: {exc}"
    return (
        np.zeros(ICON_DIM, dtype=np.float64),
        f"no icon candidate decoded ({last_error})",
    )
