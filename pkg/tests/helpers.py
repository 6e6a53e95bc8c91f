"""Shared test infrastructure: local mock endpoints, a planted-relevance
corpus, and naive reference implementations of the ranking metrics."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from esgidx.corpus import Document, ReportMeta, StandardFamily, ingest_document
from esgidx.judge import JudgedPair
from esgidx.standards import Catalog, DisclosureRequirement, pages_to_raw

# ---------------------------------------------------------------------------
# Mock chat-completion endpoint


@dataclass
class ServerStats:
    calls: int = 0
    in_flight: int = 0
    peak_in_flight: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def enter(self):
        with self.lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)

    def leave(self):
        with self.lock:
            self.in_flight -= 1


class MockChatServer:
    """Local chat endpoint. ``reply`` maps the prompt to assistant text;
    ``fail_first`` initial requests return HTTP 500; ``rate_limit_first``
    return 429 before anything succeeds."""

    def __init__(self, reply=lambda prompt: "5", fail_first: int = 0, rate_limit_first: int = 0,
                 hold_ms: int = 0):
        self.stats = ServerStats()
        self.received_prompts: list[str] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                outer.stats.enter()
                try:
                    body = self.rfile.read(int(self.headers["Content-Length"]))
                    payload = json.loads(body)
                    prompt = payload["messages"][0]["content"]
                    with outer._lock:
                        outer.received_prompts.append(prompt)
                        if outer.fail_first > 0:
                            outer.fail_first -= 1
                            self.send_response(500)
                            self.end_headers()
                            return
                        if outer.rate_limit_first > 0:
                            outer.rate_limit_first -= 1
                            self.send_response(429)
                            self.send_header("Retry-After", "0.01")
                            self.end_headers()
                            return
                    if outer.hold_ms:
                        threading.Event().wait(outer.hold_ms / 1000)
                    text = outer.reply(prompt)
                    data = json.dumps(
                        {"choices": [{"message": {"role": "assistant", "content": text}}]}
                    ).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                finally:
                    outer.stats.leave()

            def log_message(self, *args):
                pass

        self.reply = reply
        self.fail_first = fail_first
        self.rate_limit_first = rate_limit_first
        self.hold_ms = hold_ms
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


class MockEmbedServer:
    """Local embeddings endpoint implementing {model, input} -> {data: [...]}.

    ``embed_fn`` maps one text to a vector; ``fail_first`` initial requests
    return HTTP 500.
    """

    def __init__(self, embed_fn, fail_first: int = 0):
        self.stats = ServerStats()
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                outer.stats.enter()
                try:
                    body = self.rfile.read(int(self.headers["Content-Length"]))
                    payload = json.loads(body)
                    with outer._lock:
                        if outer.fail_first > 0:
                            outer.fail_first -= 1
                            self.send_response(500)
                            self.end_headers()
                            return
                    data = {
                        "data": [
                            {"index": i, "embedding": outer.embed_fn(text)}
                            for i, text in enumerate(payload["input"])
                        ]
                    }
                    raw = json.dumps(data).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(raw)))
                    self.end_headers()
                    self.wfile.write(raw)
                finally:
                    outer.stats.leave()

            def log_message(self, *args):
                pass

        self.embed_fn = embed_fn
        self.fail_first = fail_first
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1/embeddings"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


# ---------------------------------------------------------------------------
# Planted-relevance corpus

TOPIC_MARKER = re.compile(r"topic-(\d+)")


def topic_of(text: str) -> int | None:
    m = TOPIC_MARKER.search(text)
    return int(m.group(1)) if m else None


class PlantedTopicProvider:
    """One-hot embedding by planted topic marker; unmarked text maps to a
    shared background direction."""

    def __init__(self, n_topics: int):
        self.n_topics = n_topics
        self.tag = f"planted-onehot-{n_topics}"

    def embed(self, texts):
        rows = []
        for text in texts:
            vec = [0.0] * (self.n_topics + 1)
            topic = topic_of(text)
            vec[topic if topic is not None else self.n_topics] = 1.0
            rows.append(vec)
        return rows


class PlantedJudge:
    """Scores 5 when query and chunk carry the same planted topic, else 0."""

    def __init__(self):
        self.calls = 0

    def score_pair(self, query_id, query_text, chunk_id, chunk_text) -> JudgedPair:
        self.calls += 1
        score = 5 if topic_of(query_text) is not None and topic_of(query_text) == topic_of(chunk_text) else 0
        return JudgedPair(
            query_id=query_id,
            chunk_id=chunk_id,
            score=score,
            model_tag="planted-judge",
            raw_response=str(score),
        )


@dataclass
class PlantedCorpus:
    docs: dict[str, Document]
    metas: list[ReportMeta]
    catalog: Catalog
    index_rows: list[dict]
    n_topics: int

    def gold_pages(self, doc_id: str, topic: int) -> list[int]:
        disclosure_id = f"ESRS T{topic}-1"
        for row in self.index_rows:
            if row["doc_id"] == doc_id and row["disclosure_id"] == disclosure_id:
                from esgidx.standards import resolve_page_refs

                return resolve_page_refs(row["pages_raw"])
        return []


def build_planted_corpus(
    n_docs: int = 12, n_pages: int = 30, n_topics: int = 6, pages_per_topic: int = 3
) -> PlantedCorpus:
    """Documents whose first topic-block pages carry topic markers; the
    matching content index is exact, so a perfect retriever scores 1.0."""
    assert n_topics * pages_per_topic < n_pages
    docs: dict[str, Document] = {}
    metas: list[ReportMeta] = []
    index_rows: list[dict] = []
    requirements = [
        DisclosureRequirement(
            disclosure_id=f"ESRS T{t}-1",
            title=f"Planted subject topic-{t} coverage",
            standard_family=StandardFamily.ESRS,
            topic=f"T{t}",
        )
        for t in range(n_topics)
    ]
    catalog = Catalog(requirements)
    for d in range(n_docs):
        doc_id = f"planted-{d:02d}"
        meta = ReportMeta(
            doc_id=doc_id,
            company=f"Company {d}",
            industry="synthetic",
            year=2021,
            standard_family=StandardFamily.ESRS,
            page_count=n_pages,
        )
        records = []
        for page in range(1, n_pages + 1):
            block = (page - 1) // pages_per_topic
            if block < n_topics:
                text = (
                    f"topic-{block} disclosure evidence in report {doc_id} page {page}. "
                    f"Figures and policy detail supporting topic-{block}."
                )
            else:
                text = (
                    f"General commentary for report {doc_id} page {page}: operations, "
                    f"management remarks and unrelated narrative."
                )
            records.append({"doc_id": doc_id, "page": page, "text": text})
        docs[doc_id] = ingest_document(records, meta)
        metas.append(meta)
        for t in range(n_topics):
            pages = [t * pages_per_topic + 1 + i for i in range(pages_per_topic)]
            index_rows.append(
                {
                    "doc_id": doc_id,
                    "standard_family": "ESRS",
                    "disclosure_id": f"ESRS T{t}-1",
                    "title": f"Planted subject topic-{t} coverage",
                    "pages_raw": pages_to_raw(pages),
                    "note": "",
                }
            )
    return PlantedCorpus(
        docs=docs, metas=metas, catalog=catalog, index_rows=index_rows, n_topics=n_topics
    )


# ---------------------------------------------------------------------------
# Synthetic interoperability crosswalk with hand-set aggregate counts
# (11 topics / 112 sections / 1230 datapoints, 99 sections and 648
# datapoints overlapping GRI), standing in for the official export.


def build_crosswalk_fixture() -> list[dict]:
    n_topics = 11
    n_sections = 112
    n_datapoints = 1230
    overlapping_sections = 99
    overlapping_datapoints = 648

    sections_per_topic = [n_sections // n_topics] * n_topics
    for i in range(n_sections - sum(sections_per_topic)):
        sections_per_topic[i] += 1
    sections: list[tuple[str, str]] = []
    for t, count in enumerate(sections_per_topic):
        topic = f"T{t + 1:02d}"
        sections.extend((topic, f"{topic}-S{s + 1:02d}") for s in range(count))
    assert len(sections) == n_sections

    base = n_datapoints // n_sections
    datapoints_per_section = [base] * n_sections
    for i in range(n_datapoints - base * n_sections):
        datapoints_per_section[i] += 1

    # First `overlapping_sections` sections get at least one GRI-mapped
    # datapoint; the rest get none. Extra overlaps round-robin over the
    # overlapping sections without exceeding their datapoint counts.
    overlaps_per_section = [0] * n_sections
    for i in range(overlapping_sections):
        overlaps_per_section[i] = 1
    remaining = overlapping_datapoints - overlapping_sections
    i = 0
    while remaining > 0:
        idx = i % overlapping_sections
        if overlaps_per_section[idx] < datapoints_per_section[idx]:
            overlaps_per_section[idx] += 1
            remaining -= 1
        i += 1

    rows: list[dict] = []
    gri_serial = 0
    for sec_idx, (topic, section) in enumerate(sections):
        for dp in range(datapoints_per_section[sec_idx]):
            datapoint = f"{section}-D{dp + 1:02d}"
            if dp < overlaps_per_section[sec_idx]:
                gri_serial += 1
                gri = f"GRI {300 + gri_serial % 100}-{gri_serial}"
            else:
                gri = ""
            rows.append(
                {
                    "esrs_topic": topic,
                    "esrs_section": section,
                    "esrs_datapoint": datapoint,
                    "gri_datapoint": gri,
                }
            )
    assert len(rows) == n_datapoints
    assert sum(1 for r in rows if r["gri_datapoint"]) == overlapping_datapoints
    return rows


def write_crosswalk_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["esrs_topic", "esrs_section", "esrs_datapoint", "gri_datapoint"]
        )
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Naive reference metrics (kept deliberately separate from the library code)


def ref_recall(ranked: list[int], relevant: set[int], k: int) -> float:
    found = 0
    for page in relevant:
        if page in ranked[:k]:
            found += 1
    return found / len(relevant)


def ref_mrr(ranked: list[int], relevant: set[int], k: int) -> float:
    rank = 0
    for page in ranked[:k]:
        rank += 1
        if page in relevant:
            return 1.0 / rank
    return 0.0


def ref_map(ranked: list[int], relevant: set[int], k: int) -> float:
    import math  # noqa: F401  (parallel shape with ref_ndcg)

    score = 0.0
    seen_relevant = 0
    for i in range(min(k, len(ranked))):
        if ranked[i] in relevant:
            seen_relevant += 1
            precision_here = 0
            for j in range(i + 1):
                if ranked[j] in relevant:
                    precision_here += 1
            score += precision_here / (i + 1)
    return score / len(relevant)


def ref_ndcg(ranked: list[int], relevant: set[int], k: int) -> float:
    import math

    dcg = 0.0
    for i in range(min(k, len(ranked))):
        if ranked[i] in relevant:
            dcg += 1.0 / math.log2(i + 2)
    ideal = 0.0
    for i in range(min(k, len(relevant))):
        ideal += 1.0 / math.log2(i + 2)
    return dcg / ideal
