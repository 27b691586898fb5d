"""Description preprocessing: lowercase, strip non-text, drop stop-words,
dictionary lemmatization.

The stop-word list and the surface→lemma table are plain-text resources
bundled with the package, so two runs of the pipeline always tokenize
identically. The lemma table is resolved to a fixpoint at load time,
which makes the whole pipeline idempotent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z]+")
_LEMMA_LINE_RE = re.compile(r"^([a-z]+)\t([a-z]+)$")


def _read_resource(name: str) -> str:
    return resources.files("appcat.resources").joinpath(name).read_text("utf-8")


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    words = frozenset(
        line.strip() for line in _read_resource("stopwords.txt").splitlines()
        if line.strip()
    )
    return words


@lru_cache(maxsize=1)
def default_lemmas() -> dict[str, str]:
    table: dict[str, str] = {}
    for line_no, line in enumerate(_read_resource("lemmas.tsv").splitlines(), 1):
        if not line.strip():
            continue
        match = _LEMMA_LINE_RE.match(line)
        if match is None:
            raise ValueError(f"lemmas.tsv line {line_no}: malformed entry {line!r}")
        table[match.group(1)] = match.group(2)
    # Resolve chains (a→b, b→c) so repeated application is a no-op.
    for surface in table:
        lemma = table[surface]
        seen = {surface}
        while lemma in table and lemma not in seen:
            seen.add(lemma)
            lemma = table[lemma]
        table[surface] = lemma
    return table


@dataclass(frozen=True)
class PrepConfig:
    min_token_len: int = 2
    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    lemmas: dict[str, str] = field(default_factory=default_lemmas)


def preprocess(text: str, config: PrepConfig | None = None) -> list[str]:
    """Turn raw description text into a cleaned, lemmatized token list.

    Total function: any input (including empty) yields a list of
    lowercase ASCII-alphabetic tokens with stop-words and short tokens
    removed, in original order.
    """
    if config is None:
        config = PrepConfig()
    lowered = _URL_RE.sub(" ", text).lower()
    tokens: list[str] = []
    for raw in _TOKEN_RE.findall(lowered):
        if len(raw) < config.min_token_len or raw in config.stopwords:
            continue
        lemma = config.lemmas.get(raw, raw)
        if len(lemma) < config.min_token_len or lemma in config.stopwords:
            continue
        tokens.append(lemma)
    return tokens


def joined_text(tokens: list[str]) -> str:
    """Single-space join; the embedding input form."""
    return " ".join(tokens)
