"""Text-embedding providers behind one contract, plus a persistent cache.

Two providers ship with the toolkit:

* ``RemoteProvider`` calls an OpenAI-style ``/embeddings`` HTTP endpoint
  (1536-dim by default) with bounded retries and batching.
* ``OfflineProvider`` is a deterministic, dependency-free stand-in:
  signed feature-hashing of character 3-5 grams into 256 buckets with a
  64-bit FNV-1a hash, L2-normalized. Identical across runs and
  platforms, which keeps the whole pipeline testable without network
  access or credentials.

Vectors are cached on disk keyed by (provider id, content hash), so
re-running a large corpus never re-bills the API.
"""

from __future__ import annotations

import os
import struct
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

OFFLINE_DIM = 256
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_CACHE_MAGIC = b"EMB1"


class EmbeddingError(RuntimeError):
    """Base class for embedding failures."""


class CredentialError(EmbeddingError):
    """The configured credential environment variable is not set."""


class TransportError(EmbeddingError):
    """The remote endpoint kept failing after the bounded retries."""


class DimensionMismatchError(EmbeddingError):
    """The provider returned vectors of an unexpected width."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError("embedding values must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


def fnv1a_64(data: bytes) -> int:
    """Stable 64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def content_hash(text: str) -> int:
    return fnv1a_64(text.encode("utf-8", errors="replace"))


def offline_embed(text: str) -> np.ndarray:
    """Deterministic 256-dim embedding via signed n-gram hashing.

    Character 3/4/5-grams are hashed with FNV-1a; the low byte picks the
    bucket and the next bit the sign. The result is L2-normalized unless
    no n-gram exists (then it is the zero vector).
    """
    accum = np.zeros(OFFLINE_DIM, dtype=np.float64)
    for n in (3, 4, 5):
        for i in range(len(text) - n + 1):
            h = fnv1a_64(text[i : i + n].encode("utf-8", errors="replace"))
            bucket = h & 0xFF
            sign = 1.0 if (h >> 8) & 1 else -1.0
            accum[bucket] += sign
    norm = float(np.linalg.norm(accum))
    if norm > 0.0:
        accum /= norm
    return accum.astype(np.float32)


class Provider(Protocol):
    provider_id: str
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class OfflineProvider:
    """Pure in-process provider; no configuration, no network."""

    provider_id = "offline-fnv1a-ngram-v1"
    dim = OFFLINE_DIM

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [offline_embed(text) for text in texts]


class RemoteProvider:
    """Client for an OpenAI-style JSON embedding endpoint.

    The credential is read from the environment variable named by
    ``api_key_env`` at request time. Requests are retried up to
    ``max_attempts`` times with exponential backoff starting at
    ``backoff`` seconds, honoring Retry-After on rate-limit responses.
    Inputs longer than the token budget (approximated as 4 characters
    per token) are truncated before the request.
    """

    def __init__(
        self,
        model: str = "text-embedding-ada-002",
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        dim: int = 1536,
        max_input_tokens: int = 8192,
        max_attempts: int = 5,
        backoff: float = 1.0,
        timeout: float = 60.0,
        session=None,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.dim = dim
        self.max_input_tokens = max_input_tokens
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.provider_id = f"openai:{model}"
        self.request_count = 0
        self._session = session
        self._sleep = time.sleep

    def _get_session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def _truncate(self, text: str) -> str:
        max_chars = self.max_input_tokens * 4
        return text[:max_chars] if len(text) > max_chars else text

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise CredentialError(
                f"environment variable {self.api_key_env} is not set"
            )
        payload = {
            "model": self.model,
            "input": [self._truncate(text) for text in texts],
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        url = f"{self.base_url}/embeddings"
        session = self._get_session()
        delay = self.backoff
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt > 0:
                self._sleep(delay)
                delay *= 2
            try:
                self.request_count += 1
                response = session.post(
                    url, json=payload, headers=headers, timeout=self.timeout
                )
            except Exception as exc:  # connection-level failure
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                retry_after = response.headers.get("Retry-After")
                if retry_after is not None:
                    try:
                        delay = max(delay, float(retry_after))
                    except ValueError:
                        pass
                last_error = TransportError(
                    f"HTTP {response.status_code} from {url}"
                )
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"HTTP {response.status_code} from {url}: {response.text[:200]}"
                )
            return self._parse_response(response.json(), len(texts))
        raise TransportError(
            f"giving up after {self.max_attempts} attempts: {last_error}"
        )

    def _parse_response(self, body: dict, expected: int) -> list[np.ndarray]:
        data = body.get("data")
        if not isinstance(data, list) or len(data) != expected:
            raise TransportError(
                f"response carries {0 if not isinstance(data, list) else len(data)} "
                f"embeddings, expected {expected}"
            )
        vectors: list[np.ndarray | None] = [None] * expected
        for item in data:
            index = int(item["index"])
            vec = np.asarray(item["embedding"], dtype=np.float32)
            if vec.shape != (self.dim,):
                raise DimensionMismatchError(
                    f"provider returned dim {vec.shape}, expected ({self.dim},)"
                )
            vectors[index] = vec
        return [v for v in vectors if v is not None]


class EmbeddingCache:
    """Content-addressed vector store: one little-endian f32 record per key.

    Layout: ``<cache_dir>/<provider_id>/<hash:016x>.emb`` where hash is
    the FNV-1a of the exact input text. Each file is
    ``EMB1 | u16 provider-id length | provider id | u32 dim | dim * f32le``.
    Writes go to a temp file and are renamed into place, so a crashed
    run never leaves a truncated record.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def _path(self, provider_id: str, text: str) -> Path:
        safe = provider_id.replace("/", "_").replace(":", "_")
        return self.cache_dir / safe / f"{content_hash(text):016x}.emb"

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        path = self._path(provider_id, text)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        return self._decode(raw, provider_id, path)

    def _decode(self, raw: bytes, provider_id: str, path: Path) -> np.ndarray:
        if raw[:4] != _CACHE_MAGIC:
            raise EmbeddingError(f"{path}: bad cache record magic")
        (pid_len,) = struct.unpack_from("<H", raw, 4)
        pid = raw[6 : 6 + pid_len].decode("utf-8")
        if pid != provider_id:
            raise EmbeddingError(
                f"{path}: record belongs to provider {pid!r}, not {provider_id!r}"
            )
        offset = 6 + pid_len
        (dim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if len(raw) != offset + 4 * dim:
            raise EmbeddingError(f"{path}: truncated cache record")
        return np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).copy()

    def put(self, provider_id: str, text: str, values: np.ndarray) -> None:
        path = self._path(provider_id, text)
        path.parent.mkdir(parents=True, exist_ok=True)
        pid_bytes = provider_id.encode("utf-8")
        record = (
            _CACHE_MAGIC
            + struct.pack("<H", len(pid_bytes))
            + pid_bytes
            + struct.pack("<I", values.shape[0])
            + np.asarray(values, dtype="<f4").tobytes()
        )
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(record)
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise


def embed_texts(
    texts: Sequence[str],
    provider: Provider,
    cache: EmbeddingCache | None = None,
    batch_size: int = 64,
    concurrency: int = 4,
) -> list[EmbeddingVector]:
    """Embed texts order-preservingly, deduplicating and consulting the cache.

    The provider sees at most ceil(distinct/batch_size) batches; batches
    may run on up to ``concurrency`` threads.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    distinct: list[str] = []
    seen: set[str] = set()
    for text in texts:
        if text not in seen:
            seen.add(text)
            distinct.append(text)

    resolved: dict[str, np.ndarray] = {}
    misses: list[str] = []
    for text in distinct:
        cached = cache.get(provider.provider_id, text) if cache else None
        if cached is not None:
            if cached.shape != (provider.dim,):
                raise DimensionMismatchError(
                    f"cached vector has dim {cached.shape[0]}, "
                    f"provider expects {provider.dim}"
                )
            resolved[text] = cached
        else:
            misses.append(text)

    batches = [
        misses[start : start + batch_size]
        for start in range(0, len(misses), batch_size)
    ]

    def run_batch(batch: list[str]) -> list[np.ndarray]:
        return provider.embed_batch(batch)

    if len(batches) > 1 and concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(batch) for batch in batches]

    for batch, vectors in zip(batches, results):
        if len(vectors) != len(batch):
            raise EmbeddingError(
                f"provider returned {len(vectors)} vectors for {len(batch)} texts"
            )
        for text, vec in zip(batch, vectors):
            if vec.shape != (provider.dim,):
                raise DimensionMismatchError(
                    f"provider returned dim {vec.shape[0]}, expected {provider.dim}"
                )
            resolved[text] = vec
            if cache is not None:
                cache.put(provider.provider_id, text, vec)

    return [
        EmbeddingVector(values=resolved[text], provider_id=provider.provider_id)
        for text in texts
    ]
