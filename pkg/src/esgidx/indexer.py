"""Automated content indexing: retrieve, judge, and map chunks back to pages.

For each disclosure query the top-k chunks of the document are retrieved and
judged; pages of the chunks clearing the score threshold form the predicted
index entry. Predictions score against a gold index with set-based P/R/F1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .corpus import Document
from .errors import JudgeFailureError, JudgePromptError
from .judge import JudgedPair
from .retrieval import EmbeddingProvider, VectorStore, embed_batch, search_topk
from .standards import Catalog, ContentIndexEntry, DisclosureRequirement, pages_to_raw, render_query
from .triplets import make_query_id


class PairScorer(Protocol):
    """Anything that can judge one (query, chunk) pair; JudgeClient qualifies."""

    def score_pair(
        self, query_id: str, query_text: str, chunk_id: str, chunk_text: str
    ) -> JudgedPair: ...


@dataclass(frozen=True)
class Evidence:
    chunk_id: str
    similarity: float
    llm_score: int


@dataclass(frozen=True)
class PredictedIndexEntry:
    disclosure_id: str
    pages: tuple[int, ...]
    evidence: tuple[Evidence, ...]


@dataclass
class PRFScores:
    precision: float
    recall: float
    f1: float


@dataclass
class PRFReport:
    per_disclosure: dict[str, PRFScores]
    micro: PRFScores


@dataclass
class IndexGeneration:
    entries: list[PredictedIndexEntry]
    warnings: list[str]


def generate_content_index(
    doc: Document,
    queries: Sequence[DisclosureRequirement],
    provider: EmbeddingProvider,
    judge: PairScorer,
    store: VectorStore | None = None,
    k: int = 10,
    threshold: int = 3,
) -> IndexGeneration:
    """Predict the disclosure -> pages table for one document.

    A judge failure drops that chunk with a warning; the document never
    aborts. Queries whose every retrieved chunk falls below the threshold
    still emit an entry, with empty pages.
    """
    if store is None:
        vectors = embed_batch(
            [c.text for c in doc.chunks], provider, ids=[c.chunk_id for c in doc.chunks]
        )
        store = VectorStore(provider_tag=provider.tag, dim=vectors[0].dim)
        store.add_chunk_vectors(vectors)
    partition = store.partition(doc.doc_id)

    ordered = sorted(queries, key=lambda q: q.disclosure_id)
    query_texts = [render_query(q) for q in ordered]
    query_ids = [make_query_id(doc.doc_id, q.disclosure_id) for q in ordered]
    query_vecs = embed_batch(query_texts, provider, ids=query_ids)

    chunk_text = {c.chunk_id: c.text for c in doc.chunks}
    entries: list[PredictedIndexEntry] = []
    warnings: list[str] = []
    for req, query_id, query_text, query_vec in zip(ordered, query_ids, query_texts, query_vecs):
        hits = search_topk(query_vec, partition, k)
        evidence: list[Evidence] = []
        pages: set[int] = set()
        for hit in hits:
            try:
                judged = judge.score_pair(query_id, query_text, hit.chunk_id, chunk_text[hit.chunk_id])
            except (JudgeFailureError, JudgePromptError) as exc:
                warnings.append(f"{query_id}: dropped {hit.chunk_id}: {exc}")
                continue
            evidence.append(Evidence(hit.chunk_id, hit.score, judged.score))
            if judged.score >= threshold:
                pages.add(hit.page)
        entries.append(
            PredictedIndexEntry(
                disclosure_id=req.disclosure_id,
                pages=tuple(sorted(pages)),
                evidence=tuple(evidence),
            )
        )
    return IndexGeneration(entries=entries, warnings=warnings)


def _prf(tp: int, n_pred: int, n_gold: int) -> PRFScores:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRFScores(precision=precision, recall=recall, f1=f1)


def score_index(
    pred: Sequence[PredictedIndexEntry], gold: Sequence[ContentIndexEntry]
) -> PRFReport:
    """Set-based precision/recall/F1 of predicted pages against the gold index.

    Gold entries with no pages (undisclosed or external references) are
    excluded, mirroring qrels construction; disclosures predicted but absent
    from the scorable gold count as all-false-positive.
    """
    gold_pages: dict[str, set[int]] = {
        e.disclosure_id: set(e.pages) for e in gold if e.pages
    }
    excluded = {e.disclosure_id for e in gold if not e.pages}
    pred_pages: dict[str, set[int]] = {
        e.disclosure_id: set(e.pages) for e in pred if e.disclosure_id not in excluded
    }

    per_disclosure: dict[str, PRFScores] = {}
    tp_total = pred_total = gold_total = 0
    for disclosure_id in sorted(set(gold_pages) | set(pred_pages)):
        p = pred_pages.get(disclosure_id, set())
        g = gold_pages.get(disclosure_id, set())
        tp = len(p & g)
        per_disclosure[disclosure_id] = _prf(tp, len(p), len(g))
        tp_total += tp
        pred_total += len(p)
        gold_total += len(g)
    return PRFReport(
        per_disclosure=per_disclosure,
        micro=_prf(tp_total, pred_total, gold_total),
    )


def group_scores_by_topic(
    report: PRFReport, catalog: Catalog
) -> dict[str, PRFScores]:
    """Pool per-disclosure F1 inputs by catalog topic for breakdown tables."""
    # Re-pool counts per topic is impossible from PRFScores alone; average instead.
    grouped: dict[str, list[PRFScores]] = {}
    for disclosure_id, scores in report.per_disclosure.items():
        try:
            topic = catalog.get(disclosure_id).topic or "(none)"
        except Exception:
            topic = "(none)"
        grouped.setdefault(topic, []).append(scores)
    out: dict[str, PRFScores] = {}
    for topic, rows in sorted(grouped.items()):
        out[topic] = PRFScores(
            precision=sum(r.precision for r in rows) / len(rows),
            recall=sum(r.recall for r in rows) / len(rows),
            f1=sum(r.f1 for r in rows) / len(rows),
        )
    return out


def predicted_index_rows(
    doc_id: str,
    entries: Sequence[PredictedIndexEntry],
    queries: Sequence[DisclosureRequirement],
) -> list[dict]:
    """Rows in the content-index tabular layout, round-trippable by the
    standards reader."""
    titles = {q.disclosure_id: q for q in queries}
    rows: list[dict] = []
    for entry in entries:
        req = titles[entry.disclosure_id]
        rows.append(
            {
                "doc_id": doc_id,
                "standard_family": req.standard_family.value,
                "disclosure_id": entry.disclosure_id,
                "title": req.title,
                "pages_raw": pages_to_raw(entry.pages),
                "note": "",
            }
        )
    return rows


def write_evidence_jsonl(
    entries: Sequence[PredictedIndexEntry], path: Path | str
) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            for ev in entry.evidence:
                fh.write(
                    json.dumps(
                        {
                            "disclosure_id": entry.disclosure_id,
                            "chunk_id": ev.chunk_id,
                            "similarity": round(ev.similarity, 9),
                            "llm_score": ev.llm_score,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                )
                fh.write("\n")
                count += 1
    return count


def prf_report_to_json(report: PRFReport, config_hash: str = "") -> str:
    payload = {
        "micro": vars(report.micro),
        "per_disclosure": {k: vars(v) for k, v in sorted(report.per_disclosure.items())},
    }
    if config_hash:
        payload["config_hash"] = config_hash
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def format_prf_table(report: PRFReport) -> str:
    lines = [f"{'disclosure':<24} {'prec':>6} {'rec':>6} {'f1':>6}"]
    for disclosure_id, s in sorted(report.per_disclosure.items()):
        lines.append(f"{disclosure_id:<24} {s.precision:>6.2f} {s.recall:>6.2f} {s.f1:>6.2f}")
    m = report.micro
    lines.append(f"{'micro':<24} {m.precision:>6.2f} {m.recall:>6.2f} {m.f1:>6.2f}")
    return "\n".join(lines)
