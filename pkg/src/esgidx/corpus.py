"""Report ingestion: page text normalization and overlapping fixed-window chunking.

Pages arrive as line-delimited records ``{doc_id, page, text}``. Each page is
normalized (newlines removed, whitespace collapsed) and sliced into character
windows that stride by ``size - overlap``, so consecutive chunks of a page
share their boundary text.
"""

from __future__ import annotations

import csv
import enum
import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import ChunkingConfigError, IngestError

CHUNK_SIZE = 2048
CHUNK_OVERLAP = 512


class StandardFamily(enum.Enum):
    GRI_OLD = "GRI_OLD"
    GRI_NEW = "GRI_NEW"
    ESRS = "ESRS"

    @property
    def is_gri(self) -> bool:
        return self in (StandardFamily.GRI_OLD, StandardFamily.GRI_NEW)


@dataclass(frozen=True)
class ReportMeta:
    """Report-level attributes used for splitting and validation."""

    doc_id: str
    company: str
    industry: str
    year: int
    standard_family: StandardFamily
    page_count: int

    def __post_init__(self):
        if not self.doc_id:
            raise IngestError("doc_id must be non-empty")
        if not 2000 <= self.year <= 2100:
            raise IngestError(f"{self.doc_id}: year {self.year} outside [2000, 2100]")
        if self.page_count < 1:
            raise IngestError(f"{self.doc_id}: page_count must be >= 1")


@dataclass(frozen=True)
class PageText:
    doc_id: str
    page: int
    raw_text: str
    normalized_text: str

    def __post_init__(self):
        if self.page < 1:
            raise IngestError(f"{self.doc_id}: page numbers are 1-based, got {self.page}")


@dataclass(frozen=True)
class Chunk:
    """A window of one page's normalized text; the unit of retrieval."""

    chunk_id: str
    doc_id: str
    page: int
    ordinal: int
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class Document:
    meta: ReportMeta
    pages: tuple[PageText, ...]
    chunks: tuple[Chunk, ...]

    _by_page: dict[int, tuple[Chunk, ...]] = field(
        init=False, default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self):
        by_page: dict[int, list[Chunk]] = {}
        for chunk in self.chunks:
            by_page.setdefault(chunk.page, []).append(chunk)
        object.__setattr__(
            self, "_by_page", {p: tuple(cs) for p, cs in by_page.items()}
        )

    @property
    def doc_id(self) -> str:
        return self.meta.doc_id

    def chunks_on_page(self, page: int) -> tuple[Chunk, ...]:
        return self._by_page.get(page, ())


def normalize_text(raw: str) -> str:
    """Collapse all whitespace runs (newlines included) to single spaces.

    Newlines become spaces rather than vanishing so words on adjacent lines
    do not concatenate. Idempotent; empty input yields empty output.
    """
    return " ".join(raw.split())


def make_chunk_id(doc_id: str, page: int, ordinal: int) -> str:
    return f"{doc_id}:p{page}:c{ordinal}"


def parse_chunk_id(chunk_id: str) -> tuple[str, int, int]:
    """Split a chunk id back into (doc_id, page, ordinal).

    Parses from the right so doc_ids containing colons survive.
    """
    doc_id, page_part, ord_part = chunk_id.rsplit(":", 2)
    if not page_part.startswith("p") or not ord_part.startswith("c"):
        raise ValueError(f"not a chunk id: {chunk_id!r}")
    return doc_id, int(page_part[1:]), int(ord_part[1:])


def chunk_page(page: PageText, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[Chunk]:
    """Slice a page's normalized text into fixed windows with overlap.

    Window starts are 0, stride, 2*stride, ... with stride = size - overlap;
    generation stops at the first window whose end reaches the text length,
    so no trailing chunk is wholly contained in its predecessor.
    """
    if size <= overlap or overlap < 0:
        raise ChunkingConfigError(f"need size > overlap >= 0, got size={size} overlap={overlap}")
    text = page.normalized_text
    n = len(text)
    if n == 0:
        return []
    stride = size - overlap
    chunks: list[Chunk] = []
    start = 0
    ordinal = 0
    while True:
        end = min(start + size, n)
        chunks.append(
            Chunk(
                chunk_id=make_chunk_id(page.doc_id, page.page, ordinal),
                doc_id=page.doc_id,
                page=page.page,
                ordinal=ordinal,
                start=start,
                end=end,
                text=text[start:end],
            )
        )
        if end == n:
            break
        start += stride
        ordinal += 1
    return chunks


def ingest_document(
    pages_source: Iterable[dict],
    meta: ReportMeta,
    size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
) -> Document:
    """Assemble page records into a sorted, normalized, chunked document.

    Records may arrive unordered; duplicate page numbers and foreign doc_ids
    are rejected. Re-ingesting identical input reproduces the chunk set
    byte for byte.
    """
    seen: dict[int, PageText] = {}
    for record in pages_source:
        doc_id = record["doc_id"]
        page_no = int(record["page"])
        if doc_id != meta.doc_id:
            raise IngestError(
                f"page record doc_id {doc_id!r} does not match document {meta.doc_id!r}"
            )
        if page_no in seen:
            raise IngestError(f"{meta.doc_id}: duplicate page {page_no}")
        if page_no > meta.page_count:
            raise IngestError(
                f"{meta.doc_id}: page {page_no} exceeds declared page_count {meta.page_count}"
            )
        raw = record["text"]
        seen[page_no] = PageText(
            doc_id=doc_id, page=page_no, raw_text=raw, normalized_text=normalize_text(raw)
        )
    pages = tuple(seen[p] for p in sorted(seen))
    chunks: list[Chunk] = []
    for page in pages:
        chunks.extend(chunk_page(page, size=size, overlap=overlap))
    return Document(meta=meta, pages=pages, chunks=tuple(chunks))


def read_page_records(source: IO[str] | Path | str) -> Iterator[dict]:
    """Yield page records from a line-delimited JSON stream or file."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from read_page_records(fh)
        return
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"bad page record on line {lineno}: {exc}") from exc
        for key in ("doc_id", "page", "text"):
            if key not in record:
                raise IngestError(f"page record on line {lineno} missing {key!r}")
        yield record


def group_page_records(records: Iterable[dict]) -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for record in records:
        grouped.setdefault(record["doc_id"], []).append(record)
    return grouped


def ingest_corpus(
    records: Iterable[dict],
    metas: Iterable[ReportMeta],
    size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
) -> dict[str, Document]:
    """Ingest a multi-document page stream against its report metadata."""
    meta_by_id = {m.doc_id: m for m in metas}
    grouped = group_page_records(records)
    unknown = sorted(set(grouped) - set(meta_by_id))
    if unknown:
        raise IngestError(f"page records for unknown doc_ids: {', '.join(unknown)}")
    docs: dict[str, Document] = {}
    for doc_id in sorted(grouped):
        docs[doc_id] = ingest_document(grouped[doc_id], meta_by_id[doc_id], size, overlap)
    return docs


def document_from_chunks(meta: ReportMeta, chunks: Iterable[Chunk]) -> Document:
    """Rebuild a document view from a persisted chunk set.

    Page text is not reloaded; the result supports chunk lookups and
    metadata, which is all downstream stages need.
    """
    own = sorted(
        (c for c in chunks if c.doc_id == meta.doc_id), key=lambda c: (c.page, c.ordinal)
    )
    return Document(meta=meta, pages=(), chunks=tuple(own))


def read_report_metas(path: Path | str) -> list[ReportMeta]:
    """Load report metadata from a CSV with columns
    doc_id, company, industry, year, standard_family, page_count."""
    metas: list[ReportMeta] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            meta = ReportMeta(
                doc_id=row["doc_id"],
                company=row.get("company", ""),
                industry=row.get("industry", ""),
                year=int(row["year"]),
                standard_family=StandardFamily(row["standard_family"]),
                page_count=int(row["page_count"]),
            )
            if meta.doc_id in seen:
                raise IngestError(f"duplicate doc_id in report metadata: {meta.doc_id}")
            seen.add(meta.doc_id)
            metas.append(meta)
    return metas


def extract_pages_via_command(command: str, pdf_path: Path | str) -> list[dict]:
    """Run the configured extraction command on one PDF and parse its output.

    The command is treated as a black box that must emit page records on
    stdout. A ``{pdf}`` placeholder is substituted; otherwise the path is
    appended as the final argument.
    """
    argv = shlex.split(command)
    if any("{pdf}" in part for part in argv):
        argv = [part.replace("{pdf}", str(pdf_path)) for part in argv]
    else:
        argv.append(str(pdf_path))
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise IngestError(
            f"extraction command failed for {pdf_path} (exit {proc.returncode}): "
            f"{proc.stderr.strip()[:500]}"
        )
    return list(read_page_records(iter(proc.stdout.splitlines())))


def write_chunks_jsonl(docs: Iterable[Document], path: Path | str) -> int:
    """Persist every chunk of every document as line-delimited JSON."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            for chunk in doc.chunks:
                fh.write(
                    json.dumps(
                        {
                            "chunk_id": chunk.chunk_id,
                            "doc_id": chunk.doc_id,
                            "page": chunk.page,
                            "ordinal": chunk.ordinal,
                            "start": chunk.start,
                            "end": chunk.end,
                            "text": chunk.text,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                )
                fh.write("\n")
                count += 1
    return count


def read_chunks_jsonl(path: Path | str) -> list[Chunk]:
    chunks: list[Chunk] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    page=rec["page"],
                    ordinal=rec["ordinal"],
                    start=rec["start"],
                    end=rec["end"],
                    text=rec["text"],
                )
            )
    return chunks
