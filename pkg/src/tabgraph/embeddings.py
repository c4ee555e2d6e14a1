"""Node initialization vectors from a pluggable sentence-embedding provider.

Two providers exist: a hermetic hash-seeded embedder for tests, and an HTTP
client for a remote sentence encoder (``POST {"texts": [...]}`` returning
``{"vectors": [[...], ...]}``) backed by a persistent sqlite cache.
"""

from __future__ import annotations

import hashlib
import logging
import os
import sqlite3
import threading
from contextlib import closing, contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable
from .graph import TabularGraph

log = logging.getLogger(__name__)

DEFAULT_DIM = 768
ENDPOINT_ENV = "TABGRAPH_EMBED_ENDPOINT"
DETERMINISTIC_ID = "deterministic-test"


def stable_hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def deterministic_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Unit vector drawn from a Philox stream keyed by the text's 64-bit hash."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=stable_hash64(text)))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class EmbeddingMatrix:
    vectors: np.ndarray
    provider_id: str

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise DimensionMismatch(f"expected a 2-d matrix, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise DimensionMismatch("embedding matrix has non-finite entries")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "test"  # "test" | "remote"
    endpoint: str | None = None
    batch_size: int = 32
    cache_path: str | None = None
    dim: int = DEFAULT_DIM
    max_in_flight: int = 1
    timeout: float = 30.0
    # cache namespace; defaults to "remote:<endpoint>"
    provider_name: str | None = None

    def __post_init__(self):
        if self.kind not in ("test", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.batch_size < 1 or self.max_in_flight < 1 or self.dim < 1:
            raise ValueError("batch_size, max_in_flight and dim must be >= 1")

    def resolved_endpoint(self) -> str | None:
        return self.endpoint or os.environ.get(ENDPOINT_ENV)

    @property
    def provider_id(self) -> str:
        if self.kind == "test":
            return DETERMINISTIC_ID
        return self.provider_name or f"remote:{self.resolved_endpoint()}"


class EmbeddingCache:
    """Append-only sqlite store keyed by (provider_id, dim, text)."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        with self._connect() as con:
            con.execute("PRAGMA journal_mode=WAL")
            con.execute(
                "CREATE TABLE IF NOT EXISTS vectors ("
                " provider TEXT NOT NULL, dim INTEGER NOT NULL, text TEXT NOT NULL,"
                " vec BLOB NOT NULL, PRIMARY KEY (provider, dim, text))"
            )

    @contextmanager
    def _connect(self):
        with closing(sqlite3.connect(self.path, timeout=30.0)) as con:
            with con:
                yield con

    def get_many(self, provider: str, dim: int, texts: Sequence[str]) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        with self._connect() as con:
            for t in set(texts):
                row = con.execute(
                    "SELECT vec FROM vectors WHERE provider=? AND dim=? AND text=?", (provider, dim, t)
                ).fetchone()
                if row is not None:
                    out[t] = np.frombuffer(row[0], dtype="<f8").copy()
        return out

    def put_many(self, provider: str, dim: int, items: dict[str, np.ndarray]) -> None:
        with self._lock, self._connect() as con:
            con.executemany(
                "INSERT OR IGNORE INTO vectors VALUES (?, ?, ?, ?)",
                [(provider, dim, t, np.asarray(v, dtype="<f8").tobytes()) for t, v in items.items()],
            )


class DeterministicEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self.provider_id = DETERMINISTIC_ID

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([deterministic_embed(t, self.dim) for t in texts])


class RemoteEmbedder:
    def __init__(self, cfg: ProviderConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self.endpoint = cfg.resolved_endpoint()
        self.dim = cfg.dim
        self.provider_id = cfg.provider_id
        self.cache = EmbeddingCache(cfg.cache_path) if cfg.cache_path else None
        self._client = client

    def _request(self, client: httpx.Client, batch: list[str]) -> np.ndarray:
        try:
            resp = client.post(self.endpoint, json={"texts": batch}, timeout=self.cfg.timeout)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"embedding service unreachable at {self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderUnavailable(f"embedding service returned HTTP {resp.status_code}")
        try:
            vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed embedding response: {exc}") from exc
        if vectors.shape != (len(batch), self.dim):
            raise DimensionMismatch(
                f"expected {len(batch)} vectors of dim {self.dim}, got shape {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise DimensionMismatch("embedding service returned non-finite values")
        # cache per batch so a later failure does not discard finished requests
        if self.cache:
            self.cache.put_many(self.provider_id, self.dim, dict(zip(batch, vectors)))
        return vectors

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        known = self.cache.get_many(self.provider_id, self.dim, texts) if self.cache else {}
        missing = list(dict.fromkeys(t for t in texts if t not in known))
        if missing and not self.endpoint:
            raise ProviderUnavailable(
                f"{len(missing)} texts missing from cache and no endpoint configured (set ${ENDPOINT_ENV})"
            )
        if missing:
            bs = self.cfg.batch_size
            batches = [missing[k : k + bs] for k in range(0, len(missing), bs)]
            log.debug("embedding %d texts in %d requests", len(missing), len(batches))
            client = self._client or httpx.Client()
            try:
                if self.cfg.max_in_flight > 1 and len(batches) > 1:
                    with ThreadPoolExecutor(self.cfg.max_in_flight) as pool:
                        results = list(pool.map(lambda b: self._request(client, b), batches))
                else:
                    results = [self._request(client, b) for b in batches]
            finally:
                if self._client is None:
                    client.close()
            known.update({t: v for b, vs in zip(batches, results) for t, v in zip(b, vs)})
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([known[t] for t in texts])


def make_embedder(cfg: ProviderConfig):
    if cfg.kind == "test":
        return DeterministicEmbedder(cfg.dim)
    return RemoteEmbedder(cfg)


def embed_texts(texts: Sequence[str], cfg: ProviderConfig) -> EmbeddingMatrix:
    emb = make_embedder(cfg)
    return EmbeddingMatrix(emb.embed(texts), emb.provider_id)


def embed_graph(graph: TabularGraph, cfg: ProviderConfig | None = None) -> EmbeddingMatrix:
    """One vector per node, in canonical node order."""
    return embed_texts(graph.texts(), cfg or ProviderConfig())
