"""Sequence embedding behind a provider switch.

``deterministic`` builds IDF-weighted template counts and maps them through a
seeded Gaussian projection. ``external`` posts ``{"texts": [...]}`` to an HTTP
service answering ``{"vectors": [[...], ...]}``. Both L2-normalise.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import EmbeddingMatrix, LogSequence
from .exceptions import DimensionMismatch, InvalidConfig, PartialFailure, ProviderUnreachable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingProvider:
    kind: str = "deterministic"
    dim: int = 256
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "external"):
            raise InvalidConfig(f"unknown provider kind {self.kind!r}")
        if self.dim < 8:
            raise InvalidConfig("dim must be >= 8")
        if self.kind == "external" and not self.endpoint:
            raise InvalidConfig("external provider needs an endpoint")


def sequence_text(seq: LogSequence, template_texts: Sequence[str]) -> str:
    return "\n".join(template_texts[t] for t in seq.template_ids)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


class VectorCache:
    """Append-only JSONL cache of ``{hash, dim, vector}`` records."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open() as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[rec["hash"]] = np.asarray(rec["vector"], dtype=np.float64)

    def get(self, key):
        return self._data.get(key)

    def put(self, key, vector):
        with self._lock:
            self._data[key] = vector
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    fh.write(json.dumps({"hash": key, "dim": len(vector), "vector": vector.tolist()}) + "\n")


class ExternalEmbeddingClient:
    """Minimal JSON-over-HTTP client; ``transport`` lets tests instrument it."""

    def __init__(self, endpoint, dim, timeout=30.0, max_retries=2, transport=None):
        self.endpoint = endpoint
        self.dim = dim
        self.max_retries = max_retries
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self.requests = 0

    def embed_texts(self, texts):
        last_exc = None
        for _ in range(self.max_retries + 1):
            try:
                self.requests += 1
                resp = self._client.post(self.endpoint, json={"texts": list(texts)})
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                break
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_exc = exc
        else:
            raise ProviderUnreachable(f"embedding service at {self.endpoint} failed: {last_exc}")
        out = np.asarray(vectors, dtype=np.float64)
        if out.ndim != 2 or out.shape != (len(texts), self.dim):
            raise DimensionMismatch(f"expected {(len(texts), self.dim)}, got {out.shape}")
        return out


class SequenceEmbedder(BaseEstimator, TransformerMixin):
    """Embed log sequences as unit vectors.

    Parameters
    ----------
    kind : {"deterministic", "external"}
    dim : int, default=256
    seed : int, default=0
        Seed of the Gaussian projection (deterministic kind).
    endpoint : str, optional
        Service URL (external kind).
    cache_path : str, optional
        JSONL cache for external vectors.
    max_inflight : int, default=8
        Concurrent requests to the service.
    batch_size : int, default=64
    template_texts : list of str, optional
        Template text per id; required by the external kind.
    transport : httpx transport, optional
    """

    def __init__(self, kind="deterministic", dim=256, seed=0, endpoint=None, cache_path=None,
                 max_inflight=8, batch_size=64, template_texts=None, transport=None):
        self.kind = kind
        self.dim = dim
        self.seed = seed
        self.endpoint = endpoint
        self.cache_path = cache_path
        self.max_inflight = max_inflight
        self.batch_size = batch_size
        self.template_texts = template_texts
        self.transport = transport

    @property
    def provider(self) -> EmbeddingProvider:
        return EmbeddingProvider(self.kind, self.dim, self.endpoint, self.cache_path)

    def fit(self, X: Sequence[LogSequence], y=None):
        provider = self.provider
        if not X:
            raise InvalidConfig("cannot embed an empty corpus")
        n_templates = 1 + max(max(s.template_ids) for s in X)
        df = np.zeros(n_templates, dtype=np.int64)
        for seq in X:
            df[np.unique(seq.template_ids)] += 1
        self.n_documents_ = len(X)
        self.document_frequency_ = df
        self.idf_ = self._idf(df)
        self._projection = self._projection_rows(n_templates)
        if provider.kind == "external":
            if self.template_texts is None:
                raise InvalidConfig("external embedding needs template_texts")
            self.cache_ = VectorCache(self.cache_path)
            self.client_ = ExternalEmbeddingClient(self.endpoint, self.dim, transport=self.transport)
        return self

    def _idf(self, df):
        return np.log((1.0 + self.n_documents_) / (1.0 + df)) + 1.0

    def _projection_rows(self, n):
        # One seeded stream per template id keeps the matrix extensible.
        rows = [np.random.default_rng([self.seed, t]).standard_normal(self.dim) for t in range(n)]
        return np.vstack(rows) / np.sqrt(self.dim)

    def weighted_counts(self, seq: LogSequence) -> np.ndarray:
        """IDF-weighted template count vector before projection."""
        check_is_fitted(self, "idf_")
        n = max(len(self.idf_), 1 + max(seq.template_ids))
        counts = np.bincount(np.asarray(seq.template_ids), minlength=n).astype(np.float64)
        idf = self.idf_
        if n > len(idf):
            idf = np.concatenate([idf, self._idf(np.zeros(n - len(idf)))])
        return counts * idf

    def embed_sequence(self, seq: LogSequence) -> np.ndarray:
        check_is_fitted(self, "idf_")
        if self.kind == "external":
            return self._embed_external([seq])[0]
        w = self.weighted_counts(seq)
        proj = self._projection
        if len(w) > proj.shape[0]:
            proj = np.vstack([proj, self._projection_rows(len(w))[proj.shape[0]:]])
        return _normalize(w @ proj[: len(w)])

    def _embed_external(self, seqs):
        texts = [sequence_text(s, self.template_texts) for s in seqs]
        keys = [content_hash(t) for t in texts]
        out = np.empty((len(seqs), self.dim))
        missing = []
        for i, key in enumerate(keys):
            hit = self.cache_.get(key)
            if hit is not None and hit.shape == (self.dim,):
                out[i] = hit
            else:
                missing.append(i)
        batches = [missing[i:i + self.batch_size] for i in range(0, len(missing), self.batch_size)]

        def run(batch):
            vectors = _normalize(self.client_.embed_texts([texts[i] for i in batch]))
            for i, vec in zip(batch, vectors):
                out[i] = vec
                self.cache_.put(keys[i], vec)

        failed = []
        errors = []
        with ThreadPoolExecutor(max_workers=max(1, self.max_inflight)) as pool:
            futures = [(b, pool.submit(run, b)) for b in batches]
            for batch, fut in futures:
                try:
                    fut.result()
                except DimensionMismatch:
                    raise
                except ProviderUnreachable as exc:
                    failed.extend(batch)
                    errors.append(exc)
        if failed:
            if len(failed) == len(missing) and errors:
                raise errors[0]
            raise PartialFailure(f"{len(failed)} sequences failed to embed", sorted(failed))
        return out

    def transform(self, X: Sequence[LogSequence]) -> EmbeddingMatrix:
        check_is_fitted(self, "idf_")
        if not X:
            raise InvalidConfig("cannot embed an empty corpus")
        if self.kind == "external":
            return EmbeddingMatrix(self._embed_external(list(X)), f"external:{self.endpoint}")
        n = max(len(self.idf_), 1 + max(max(s.template_ids) for s in X))
        counts = np.zeros((len(X), n))
        for i, seq in enumerate(X):
            np.add.at(counts[i], np.asarray(seq.template_ids), 1.0)
        idf = self.idf_
        if n > len(idf):
            idf = np.concatenate([idf, self._idf(np.zeros(n - len(idf)))])
        proj = self._projection
        if n > proj.shape[0]:
            proj = np.vstack([proj, self._projection_rows(n)[proj.shape[0]:]])
        rows = _normalize((counts * idf) @ proj[:n])
        return EmbeddingMatrix(rows, f"deterministic:d={self.dim}:seed={self.seed}")


def embed_dataset(seqs: Sequence[LogSequence], embedder: SequenceEmbedder) -> EmbeddingMatrix:
    """Fit the embedder on ``seqs`` and return one row per seq_id, in order."""
    return embedder.fit(seqs).transform(seqs)
