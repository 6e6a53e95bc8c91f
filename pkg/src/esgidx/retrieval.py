"""Embedding providers, per-document vector storage, and exact top-k search.

Search is brute-force cosine within one report's chunk partition: a single
report yields a few thousand chunks at most, and exact scoring keeps tie
ordering reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
import requests

from .corpus import parse_chunk_id
from .errors import (
    DimensionMismatchError,
    EmbeddingTransportError,
    ProviderInconsistencyError,
    UndefinedSimilarityError,
    VectorFileError,
    VectorStoreError,
)


@dataclass(frozen=True)
class EmbeddingVector:
    id: str
    values: tuple[float, ...]
    dim: int
    provider_tag: str

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise DimensionMismatchError(
                f"{self.id}: {len(self.values)} values but dim={self.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.id}: non-finite embedding values")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    page: int
    score: float
    rank: int


class EmbeddingProvider(Protocol):
    tag: str

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


def embed_batch(
    texts: Sequence[str],
    provider: EmbeddingProvider,
    ids: Sequence[str] | None = None,
) -> list[EmbeddingVector]:
    """Embed texts order-preservingly; ids default to positional strings."""
    if not texts:
        return []
    if ids is not None and len(ids) != len(texts):
        raise ValueError(f"{len(ids)} ids for {len(texts)} texts")
    rows = provider.embed(texts)
    if len(rows) != len(texts):
        raise ProviderInconsistencyError(
            f"provider {provider.tag} returned {len(rows)} vectors for {len(texts)} texts"
        )
    dims = {len(row) for row in rows}
    if len(dims) != 1:
        raise ProviderInconsistencyError(
            f"provider {provider.tag} returned drifting dimensions {sorted(dims)}"
        )
    dim = dims.pop()
    out: list[EmbeddingVector] = []
    for i, row in enumerate(rows):
        vec_id = ids[i] if ids is not None else str(i)
        out.append(
            EmbeddingVector(id=vec_id, values=tuple(float(v) for v in row), dim=dim,
                            provider_tag=provider.tag)
        )
    return out


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    va, vb = a.as_array(), b.as_array()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError(
            f"cosine undefined for zero-norm vector ({a.id!r} or {b.id!r})"
        )
    return float(va @ vb / (na * nb))


@dataclass
class DocPartition:
    doc_id: str
    ids: list[str]
    pages: list[int]
    matrix: np.ndarray  # (n_chunks, dim)

    @property
    def size(self) -> int:
        return len(self.ids)


class VectorStore:
    """Chunk vectors partitioned by document; read-only during search."""

    def __init__(self, provider_tag: str, dim: int):
        self.provider_tag = provider_tag
        self.dim = dim
        self.entries: dict[str, EmbeddingVector] = {}
        self._partitions: dict[str, DocPartition] = {}
        self._pending: dict[str, list[EmbeddingVector]] = {}

    def add_chunk_vectors(self, vectors: Iterable[EmbeddingVector]) -> None:
        for vec in vectors:
            if vec.dim != self.dim:
                raise DimensionMismatchError(
                    f"{vec.id}: dim {vec.dim} does not match store dim {self.dim}"
                )
            if vec.provider_tag != self.provider_tag:
                raise VectorStoreError(
                    f"{vec.id}: provider {vec.provider_tag!r} does not match "
                    f"store {self.provider_tag!r}"
                )
            if vec.id in self.entries:
                raise VectorStoreError(f"duplicate vector id {vec.id!r}")
            self.entries[vec.id] = vec
            doc_id, _, _ = parse_chunk_id(vec.id)
            self._pending.setdefault(doc_id, []).append(vec)
            self._partitions.pop(doc_id, None)

    def partition(self, doc_id: str) -> DocPartition:
        if doc_id not in self._partitions:
            vectors = self._pending.get(doc_id, [])
            if not vectors:
                raise VectorStoreError(f"no vectors stored for document {doc_id!r}")
            ordered = sorted(vectors, key=lambda v: parse_chunk_id(v.id)[1:])
            pages = [parse_chunk_id(v.id)[1] for v in ordered]
            matrix = np.stack([v.as_array() for v in ordered])
            self._partitions[doc_id] = DocPartition(
                doc_id=doc_id,
                ids=[v.id for v in ordered],
                pages=pages,
                matrix=matrix,
            )
        return self._partitions[doc_id]

    def doc_ids(self) -> list[str]:
        return sorted(self._pending)


def search_topk(query_vec: EmbeddingVector, partition: DocPartition, k: int) -> list[ScoredChunk]:
    """Exact k-highest cosine similarities; ties break by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if partition.size == 0:
        raise VectorStoreError(f"partition {partition.doc_id!r} is empty")
    if query_vec.dim != partition.matrix.shape[1]:
        raise DimensionMismatchError(
            f"query dim {query_vec.dim} vs partition dim {partition.matrix.shape[1]}"
        )
    q = query_vec.as_array()
    qnorm = np.linalg.norm(q)
    if qnorm == 0.0:
        raise UndefinedSimilarityError(f"query {query_vec.id!r} has zero norm")
    norms = np.linalg.norm(partition.matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise UndefinedSimilarityError(
            f"zero-norm stored vector {partition.ids[int(zero[0])]!r}"
        )
    scores = partition.matrix @ q / (norms * qnorm)
    order = sorted(range(partition.size), key=lambda i: (-scores[i], partition.ids[i]))
    top = order[: min(k, partition.size)]
    return [
        ScoredChunk(
            chunk_id=partition.ids[i],
            page=partition.pages[i],
            score=float(scores[i]),
            rank=rank,
        )
        for rank, i in enumerate(top, start=1)
    ]


# ---------------------------------------------------------------------------
# Providers


def text_key(text: str) -> str:
    """Stable lookup key for text-addressed vector files."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class HashEmbeddingProvider:
    """Deterministic pseudo-random embeddings for offline runs and CI.

    Identical texts embed identically; distinct texts land in effectively
    random directions spread over the unit sphere.
    """

    def __init__(self, dim: int = 256, seed: int = 0, tag: str | None = None):
        self.dim = dim
        self.seed = seed
        self.tag = tag or f"hash-d{dim}-s{seed}"

    def _vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}|{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._vector(t).tolist() for t in texts]


class FileVectorProvider:
    """Precomputed vectors: the bridge from an external fine-tuned encoder.

    The backing vector file addresses rows by text digest (see text_key), so
    embeddings exported elsewhere line up with the exact texts used here.
    """

    def __init__(self, path: Path | str):
        tag, dim, vectors = read_vector_file(path)
        self.tag = tag
        self.dim = dim
        self._by_key = {v.id: v for v in vectors}

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        rows: list[list[float]] = []
        for text in texts:
            vec = self._by_key.get(text_key(text))
            if vec is None:
                raise VectorFileError(
                    f"no stored vector for text {text[:80]!r} (key {text_key(text)[:12]}…)"
                )
            rows.append(list(vec.values))
        return rows


class RemoteEmbeddingProvider:
    """Vendor-style embeddings endpoint: {model, input} -> {data:[{index, embedding}]}."""

    def __init__(
        self,
        endpoint_url: str,
        model: str,
        batch_size: int = 64,
        max_retries: int = 3,
        timeout: float = 60.0,
        api_key_env: str = "EMBED_API_KEY",
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint_url = endpoint_url
        self.model = model
        self.tag = model
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._session = requests.Session()
        self.calls_made = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_batch(self, batch: Sequence[str]) -> list[list[float]]:
        self.calls_made += 1
        response = self._session.post(
            self.endpoint_url,
            json={"model": self.model, "input": list(batch)},
            headers=self._headers(),
            timeout=self.timeout,
        )
        response.raise_for_status()
        payload = response.json()
        data = sorted(payload["data"], key=lambda item: item["index"])
        if len(data) != len(batch):
            raise ProviderInconsistencyError(
                f"endpoint returned {len(data)} embeddings for {len(batch)} inputs"
            )
        return [item["embedding"] for item in data]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        rows: list[list[float]] = []
        for offset in range(0, len(texts), self.batch_size):
            batch = texts[offset : offset + self.batch_size]
            last_error = ""
            for attempt in range(self.max_retries + 1):
                try:
                    rows.extend(self._post_batch(batch))
                    break
                except (requests.RequestException, KeyError) as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    if attempt < self.max_retries:
                        self._sleep(self.backoff_base * (2**attempt))
            else:
                raise EmbeddingTransportError(
                    f"embedding batch failed after {self.max_retries + 1} attempts: "
                    f"{last_error}",
                    failed_indices=list(range(offset, offset + len(batch))),
                )
        return rows


# ---------------------------------------------------------------------------
# Vector file format: JSON header {provider_tag, dim}, then "id\tv1,v2,..."
# with values at 9 significant digits (round-trip stable at that precision).


def format_value(v: float) -> str:
    return f"{v:.9g}"


def write_vector_file(
    vectors: Iterable[EmbeddingVector], path: Path | str, provider_tag: str, dim: int
) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"provider_tag": provider_tag, "dim": dim}, sort_keys=True))
        fh.write("\n")
        for vec in vectors:
            if vec.dim != dim:
                raise VectorFileError(f"{vec.id}: dim {vec.dim} does not match header {dim}")
            fh.write(vec.id)
            fh.write("\t")
            fh.write(",".join(format_value(v) for v in vec.values))
            fh.write("\n")
            count += 1
    return count


def read_vector_file(path: Path | str) -> tuple[str, int, list[EmbeddingVector]]:
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline().strip()
        if not header_line:
            raise VectorFileError(f"{path}: missing header line")
        try:
            header = json.loads(header_line)
            tag, dim = header["provider_tag"], int(header["dim"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise VectorFileError(f"{path}: bad header {header_line!r}") from exc
        vectors: list[EmbeddingVector] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                vec_id, values_part = line.split("\t", 1)
                values = tuple(float(v) for v in values_part.split(","))
            except ValueError as exc:
                raise VectorFileError(f"{path}:{lineno}: malformed vector line") from exc
            if len(values) != dim:
                raise VectorFileError(
                    f"{path}:{lineno}: {len(values)} values but header dim={dim}"
                )
            vectors.append(EmbeddingVector(id=vec_id, values=values, dim=dim, provider_tag=tag))
    return tag, dim, vectors


def write_text_lookup_file(
    texts: Sequence[str],
    rows: Sequence[Sequence[float]],
    path: Path | str,
    provider_tag: str,
    dim: int | None = None,
) -> int:
    """Write a text-addressed vector file for FileVectorProvider."""
    if len(texts) != len(rows):
        raise ValueError("texts and rows must align")
    if dim is None:
        if not rows:
            raise VectorFileError("cannot infer dim from an empty table")
        dim = len(rows[0])
    vectors = [
        EmbeddingVector(
            id=text_key(text),
            values=tuple(float(v) for v in row),
            dim=dim,
            provider_tag=provider_tag,
        )
        for text, row in zip(texts, rows)
    ]
    return write_vector_file(vectors, path, provider_tag, dim)
