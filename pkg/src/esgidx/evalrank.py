"""Page-level ranking metrics over retrieval runs.

Chunk results collapse to page rankings (best chunk score per page) because
ground truth arrives as page numbers. Metrics are binary-relevance
Recall@k, MRR@k, MAP@k, and NDCG@k, macro-averaged over queries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import EmptyRelevanceError, RunFileError
from .retrieval import ScoredChunk

DEFAULT_RECALL_K = 10
DEFAULT_OTHER_K = 50


@dataclass
class RankedRun:
    """Per-query ranked (page, score) lists for one system."""

    rows: dict[str, list[tuple[int, float]]]
    tag: str = "run"

    def ranked_pages(self, query_id: str) -> list[int]:
        return [page for page, _ in self.rows[query_id]]


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    k_values: dict[str, int]
    n_queries: int


def chunks_to_page_run(
    results: Mapping[str, Sequence[ScoredChunk]], tag: str = "run"
) -> RankedRun:
    """Collapse chunk rankings to page rankings, max score per page.

    Pages order by score descending; equal scores order by page number.
    """
    rows: dict[str, list[tuple[int, float]]] = {}
    for query_id, chunks in results.items():
        best: dict[int, float] = {}
        for chunk in chunks:
            if chunk.page not in best or chunk.score > best[chunk.page]:
                best[chunk.page] = chunk.score
        rows[query_id] = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return RankedRun(rows=rows, tag=tag)


def _check_relevant(relevant: set[int]) -> None:
    if not relevant:
        raise EmptyRelevanceError("cannot score a query with no relevant pages")


def recall_at_k(ranked_pages: Sequence[int], relevant: set[int], k: int) -> float:
    _check_relevant(relevant)
    return len(set(ranked_pages[:k]) & relevant) / len(relevant)


def mrr_at_k(ranked_pages: Sequence[int], relevant: set[int], k: int) -> float:
    _check_relevant(relevant)
    for rank, page in enumerate(ranked_pages[:k], start=1):
        if page in relevant:
            return 1.0 / rank
    return 0.0


def map_at_k(ranked_pages: Sequence[int], relevant: set[int], k: int) -> float:
    """Average precision with the full relevant count as denominator."""
    _check_relevant(relevant)
    hits = 0
    total = 0.0
    for rank, page in enumerate(ranked_pages[:k], start=1):
        if page in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def ndcg_at_k(ranked_pages: Sequence[int], relevant: set[int], k: int) -> float:
    """Binary-gain NDCG: gains discount by log2(rank + 1); the ideal ranking
    packs every relevant page at the top."""
    _check_relevant(relevant)
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, page in enumerate(ranked_pages[:k], start=1)
        if page in relevant
    )
    ideal_hits = min(len(relevant), k)
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / idcg


def query_metrics(
    ranked_pages: Sequence[int],
    relevant: set[int],
    recall_k: int = DEFAULT_RECALL_K,
    other_k: int = DEFAULT_OTHER_K,
) -> dict[str, float]:
    return {
        f"recall@{recall_k}": recall_at_k(ranked_pages, relevant, recall_k),
        f"mrr@{other_k}": mrr_at_k(ranked_pages, relevant, other_k),
        f"map@{other_k}": map_at_k(ranked_pages, relevant, other_k),
        f"ndcg@{other_k}": ndcg_at_k(ranked_pages, relevant, other_k),
    }


def aggregate(
    per_query: Mapping[str, Mapping[str, float]],
    recall_k: int = DEFAULT_RECALL_K,
    other_k: int = DEFAULT_OTHER_K,
) -> MetricReport:
    """Macro-average per-query metrics over all queries in the split."""
    if not per_query:
        raise ValueError("need at least one query to aggregate")
    labels = sorted(next(iter(per_query.values())))
    means = {
        label: sum(metrics[label] for metrics in per_query.values()) / len(per_query)
        for label in labels
    }
    return MetricReport(
        per_query={qid: dict(metrics) for qid, metrics in per_query.items()},
        means=means,
        k_values={"recall": recall_k, "others": other_k},
        n_queries=len(per_query),
    )


def evaluate_run(
    run: RankedRun,
    qrels: Mapping[str, set[int]],
    recall_k: int = DEFAULT_RECALL_K,
    other_k: int = DEFAULT_OTHER_K,
) -> MetricReport:
    """Score every run query that has relevance judgments."""
    per_query: dict[str, dict[str, float]] = {}
    for query_id in sorted(run.rows):
        if query_id not in qrels:
            continue
        per_query[query_id] = query_metrics(
            run.ranked_pages(query_id), qrels[query_id], recall_k, other_k
        )
    return aggregate(per_query, recall_k, other_k)


def report_by_doc(report: MetricReport) -> dict[str, dict[str, float]]:
    """Per-report means, recoverable because query ids embed the doc id."""
    grouped: dict[str, list[dict[str, float]]] = {}
    for query_id, metrics in report.per_query.items():
        doc_id = query_id.split("#", 1)[0]
        grouped.setdefault(doc_id, []).append(metrics)
    out: dict[str, dict[str, float]] = {}
    for doc_id, rows in sorted(grouped.items()):
        labels = sorted(rows[0])
        out[doc_id] = {label: sum(r[label] for r in rows) / len(rows) for label in labels}
    return out


# ---------------------------------------------------------------------------
# Run file: "query_id Q0 page rank score tag" (query ids may contain spaces,
# so parsing anchors on the five right-most fields).


def write_run_file(run: RankedRun, path: Path | str) -> None:
    if any(ch.isspace() for ch in run.tag):
        raise RunFileError(f"run tag must not contain whitespace: {run.tag!r}")
    with open(path, "w", encoding="utf-8") as fh:
        for query_id in sorted(run.rows):
            for rank, (page, score) in enumerate(run.rows[query_id], start=1):
                fh.write(f"{query_id} Q0 {page} {rank} {score:.9g} {run.tag}\n")


def read_run_file(path: Path | str) -> RankedRun:
    rows: dict[str, list[tuple[int, int, float]]] = {}
    tag = "run"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 6:
                raise RunFileError(f"run line {lineno} has {len(parts)} fields: {line!r}")
            query_id = " ".join(parts[:-5])
            _, page, rank, score, tag = parts[-5:]
            rows.setdefault(query_id, []).append((int(rank), int(page), float(score)))
    ordered: dict[str, list[tuple[int, float]]] = {}
    for query_id, triples in rows.items():
        triples.sort()
        ordered[query_id] = [(page, score) for _, page, score in triples]
    return RankedRun(rows=ordered, tag=tag)


def report_to_json(report: MetricReport, config_hash: str = "") -> str:
    payload = {
        "n_queries": report.n_queries,
        "k_values": report.k_values,
        "means": report.means,
        "per_query": report.per_query,
    }
    if config_hash:
        payload["config_hash"] = config_hash
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def format_report_table(report: MetricReport) -> str:
    labels = sorted(report.means)
    header = "  ".join(f"{label:>10}" for label in labels)
    values = "  ".join(f"{report.means[label]:>10.4f}" for label in labels)
    return f"{header}\n{values}\n(n_queries={report.n_queries})"
