"""Qrels and contrastive triplets from content indices, plus dataset splits.

Every content-index entry with pages becomes a query whose relevant set is
those pages. Positives are the chunks on relevant pages; each positive gets
one negative sampled uniformly from the same report's non-relevant pages.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Chunk, Document, ReportMeta
from .errors import (
    ContentIndexValidationError,
    MissingScoreError,
    NoNegativeError,
    RunFileError,
    SplitShortfallError,
)
from .standards import Catalog, ContentIndexEntry, render_query

Qrels = dict[str, set[int]]


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    query_text: str
    doc_id: str
    disclosure_id: str


@dataclass(frozen=True)
class Triplet:
    query: QueryRecord
    positive: Chunk
    negative: Chunk
    llm_score: int | None = None

    def with_score(self, score: int) -> "Triplet":
        return replace(self, llm_score=score)


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test_gri: tuple[str, ...]
    test_esrs: tuple[str, ...]
    seed: int

    def all_doc_ids(self) -> set[str]:
        return set(self.train) | set(self.dev) | set(self.test_gri) | set(self.test_esrs)


@dataclass
class SkipRecord:
    doc_id: str
    disclosure_id: str
    reason: str  # "external_ref" | "undisclosed"


@dataclass
class DropRecord:
    query_id: str
    reason: str  # "no_negative" | "unsatisfiable_page"
    detail: str = ""


@dataclass
class QrelsBuild:
    queries: list[QueryRecord]
    qrels: Qrels
    skipped: list[SkipRecord]


def make_query_id(doc_id: str, disclosure_id: str) -> str:
    return f"{doc_id}#{disclosure_id}"


def build_qrels(
    entries: Iterable[ContentIndexEntry],
    catalog: Catalog,
    metas: Mapping[str, ReportMeta],
) -> QrelsBuild:
    """Turn validated index entries into queries and page-level relevance.

    External references and undisclosed entries produce no query; they are
    counted in the skip report instead of vanishing silently.
    """
    queries: list[QueryRecord] = []
    qrels: Qrels = {}
    skipped: list[SkipRecord] = []
    for entry in entries:
        if entry.external_ref or not entry.pages:
            reason = "external_ref" if entry.external_ref else "undisclosed"
            skipped.append(SkipRecord(entry.doc_id, entry.disclosure_id, reason))
            continue
        family = metas[entry.doc_id].standard_family
        req = catalog.get(entry.disclosure_id, family)
        query_id = make_query_id(entry.doc_id, entry.disclosure_id)
        if query_id in qrels:
            raise ContentIndexValidationError(
                f"duplicate content-index entry for {query_id}"
            )
        queries.append(
            QueryRecord(
                query_id=query_id,
                query_text=render_query(req),
                doc_id=entry.doc_id,
                disclosure_id=entry.disclosure_id,
            )
        )
        qrels[query_id] = set(entry.pages)
    return QrelsBuild(queries=queries, qrels=qrels, skipped=skipped)


@dataclass
class PositivePick:
    chunks: list[Chunk]
    missing_pages: list[int]  # referenced pages that carry no chunks


def collect_positive_chunks(query: QueryRecord, qrels: Qrels, doc: Document) -> PositivePick:
    """All chunks on the query's relevant pages, in (page, ordinal) order."""
    relevant = qrels[query.query_id]
    chunks: list[Chunk] = []
    missing: list[int] = []
    for page in sorted(relevant):
        on_page = doc.chunks_on_page(page)
        if not on_page:
            missing.append(page)
        chunks.extend(on_page)
    return PositivePick(chunks=chunks, missing_pages=missing)


def _draw_rng(seed: int, query_id: str, attempt: int) -> random.Random:
    # Stable across processes and platforms; Python's hash() is salted.
    digest = hashlib.sha256(f"{seed}|{query_id}|{attempt}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_negative(
    query: QueryRecord, qrels: Qrels, doc: Document, rng_seed: int, attempt: int
) -> Chunk:
    """Uniform draw over chunks on non-relevant pages of the same report.

    Deterministic in (rng_seed, query_id, attempt), independent of call order.
    """
    relevant = qrels[query.query_id]
    eligible = [c for c in doc.chunks if c.page not in relevant]
    if not eligible:
        raise NoNegativeError(
            f"{query.query_id}: every chunked page of {doc.doc_id} is relevant"
        )
    rng = _draw_rng(rng_seed, query.query_id, attempt)
    return eligible[rng.randrange(len(eligible))]


@dataclass
class TripletBuild:
    triplets: list[Triplet]
    dropped: list[DropRecord]


def build_triplets(
    queries: Sequence[QueryRecord],
    qrels: Qrels,
    docs: Mapping[str, Document],
    rng_seed: int,
) -> TripletBuild:
    """One triplet per positive chunk, each with a freshly sampled negative.

    The negative draw uses the positive's position in the query's positive
    list as the attempt number, so output is a pure function of inputs and
    seed regardless of scheduling.
    """
    triplets: list[Triplet] = []
    dropped: list[DropRecord] = []
    for query in queries:
        doc = docs[query.doc_id]
        pick = collect_positive_chunks(query, qrels, doc)
        for page in pick.missing_pages:
            dropped.append(
                DropRecord(query.query_id, "unsatisfiable_page", f"page {page} has no chunks")
            )
        for attempt, positive in enumerate(pick.chunks):
            try:
                negative = sample_negative(query, qrels, doc, rng_seed, attempt)
            except NoNegativeError as exc:
                dropped.append(DropRecord(query.query_id, "no_negative", str(exc)))
                break
            triplets.append(Triplet(query=query, positive=positive, negative=negative))
    return TripletBuild(triplets=triplets, dropped=dropped)


def filter_triplets(triplets: Sequence[Triplet], threshold: int = 3) -> list[Triplet]:
    """Keep triplets whose judge score clears the threshold, order preserved."""
    for t in triplets:
        if t.llm_score is None:
            raise MissingScoreError(t.query.query_id, t.positive.chunk_id)
    return [t for t in triplets if t.llm_score >= threshold]


def temporal_split(
    reports: Sequence[ReportMeta],
    test_n: int = 10,
    dev_n: int = 5,
    year_cutoff: int = 2020,
    seed: int = 0,
) -> SplitManifest:
    """Chronological split: newest post-cutoff GRI reports test, next dev,
    rest train; every ESRS report is its own test set.

    Ordering is newest-first with doc_id as the tie-break, so the split is
    stable across runs.
    """
    gri = [r for r in reports if r.standard_family.is_gri]
    esrs = [r for r in reports if not r.standard_family.is_gri]
    ordered = sorted(gri, key=lambda r: (-r.year, r.doc_id))
    eligible = sum(1 for r in ordered if r.year > year_cutoff)
    if eligible < test_n:
        raise SplitShortfallError(
            f"need {test_n} reports newer than {year_cutoff}, found {eligible}"
        )
    test_gri = ordered[:test_n]
    dev = ordered[test_n : test_n + dev_n]
    train = ordered[test_n + dev_n :]
    return SplitManifest(
        train=tuple(r.doc_id for r in train),
        dev=tuple(r.doc_id for r in dev),
        test_gri=tuple(r.doc_id for r in test_gri),
        test_esrs=tuple(r.doc_id for r in sorted(esrs, key=lambda r: (-r.year, r.doc_id))),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# File formats


def _chunk_payload(chunk: Chunk) -> dict:
    return {"chunk_id": chunk.chunk_id, "page": chunk.page, "text": chunk.text}


def triplet_to_record(triplet: Triplet) -> dict:
    record = {
        "query_id": triplet.query.query_id,
        "query_text": triplet.query.query_text,
        "doc_id": triplet.query.doc_id,
        "positive": _chunk_payload(triplet.positive),
        "negative": _chunk_payload(triplet.negative),
    }
    if triplet.llm_score is not None:
        record["llm_score"] = triplet.llm_score
    return record


def write_triplets_jsonl(triplets: Iterable[Triplet], path: Path | str) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for triplet in triplets:
            fh.write(json.dumps(triplet_to_record(triplet), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            count += 1
    return count


def _chunk_from_payload(payload: dict, doc_id: str) -> Chunk:
    from .corpus import parse_chunk_id

    _, page, ordinal = parse_chunk_id(payload["chunk_id"])
    text = payload["text"]
    return Chunk(
        chunk_id=payload["chunk_id"],
        doc_id=doc_id,
        page=payload.get("page", page),
        ordinal=ordinal,
        start=0,
        end=len(text),
        text=text,
    )


def read_triplets_jsonl(path: Path | str) -> list[Triplet]:
    """Reload a triplet file; chunk offsets are not persisted and read as
    text-local."""
    triplets: list[Triplet] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            doc_id = rec["doc_id"]
            query = QueryRecord(
                query_id=rec["query_id"],
                query_text=rec["query_text"],
                doc_id=doc_id,
                disclosure_id=rec["query_id"].split("#", 1)[1],
            )
            triplets.append(
                Triplet(
                    query=query,
                    positive=_chunk_from_payload(rec["positive"], doc_id),
                    negative=_chunk_from_payload(rec["negative"], doc_id),
                    llm_score=rec.get("llm_score"),
                )
            )
    return triplets


def write_qrels(qrels: Qrels, path: Path | str) -> None:
    """Classic qrels lines: "query_id 0 page 1", sorted for determinism."""
    with open(path, "w", encoding="utf-8") as fh:
        for query_id in sorted(qrels):
            for page in sorted(qrels[query_id]):
                fh.write(f"{query_id} 0 {page} 1\n")


def read_qrels(path: Path | str) -> Qrels:
    """Parse qrels; query ids may contain spaces, so fields anchor right."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 4:
                raise RunFileError(f"qrels line {lineno} has {len(parts)} fields: {line!r}")
            query_id = " ".join(parts[:-3])
            _, page, rel = parts[-3:]
            if int(rel) > 0:
                qrels.setdefault(query_id, set()).add(int(page))
    return qrels


def write_queries_jsonl(queries: Iterable[QueryRecord], path: Path | str) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(
                json.dumps(
                    {
                        "query_id": q.query_id,
                        "query_text": q.query_text,
                        "doc_id": q.doc_id,
                        "disclosure_id": q.disclosure_id,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            fh.write("\n")
            count += 1
    return count


def read_queries_jsonl(path: Path | str) -> list[QueryRecord]:
    queries: list[QueryRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            queries.append(QueryRecord(**rec))
    return queries


def write_split_manifest(manifest: SplitManifest, path: Path | str) -> None:
    payload = {
        "train": list(manifest.train),
        "dev": list(manifest.dev),
        "test_gri": list(manifest.test_gri),
        "test_esrs": list(manifest.test_esrs),
        "seed": manifest.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_split_manifest(path: Path | str) -> SplitManifest:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return SplitManifest(
        train=tuple(payload["train"]),
        dev=tuple(payload["dev"]),
        test_gri=tuple(payload["test_gri"]),
        test_esrs=tuple(payload["test_esrs"]),
        seed=payload["seed"],
    )
