"""Triplet-file ingestion, validation carving, and batch sampling.

The triplet file is the line-delimited format produced by the retrieval
pipeline: each record carries a query, one positive chunk, and one negative
chunk from the same report.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class TripletFileError(Exception):
    """A triplet line is malformed; the message names the line number."""


@dataclass(frozen=True)
class TripletRecord:
    query_id: str
    query_text: str
    doc_id: str
    positive_text: str
    negative_text: str
    llm_score: int | None = None


@dataclass
class TripletBatchView:
    """Aligned anchor/positive/negative text lists for a training run."""

    anchors: list[str]
    positives: list[str]
    negatives: list[str]

    def __post_init__(self):
        if not (len(self.anchors) == len(self.positives) == len(self.negatives)):
            raise ValueError("anchor/positive/negative lists must align")

    def __len__(self) -> int:
        return len(self.anchors)

    @classmethod
    def from_records(cls, records: Sequence[TripletRecord]) -> "TripletBatchView":
        return cls(
            anchors=[r.query_text for r in records],
            positives=[r.positive_text for r in records],
            negatives=[r.negative_text for r in records],
        )


def read_triplet_file(path: Path | str) -> list[TripletRecord]:
    """Load triplets, failing fast with the offending line number."""
    records: list[TripletRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append(
                    TripletRecord(
                        query_id=raw["query_id"],
                        query_text=raw["query_text"],
                        doc_id=raw["doc_id"],
                        positive_text=raw["positive"]["text"],
                        negative_text=raw["negative"]["text"],
                        llm_score=raw.get("llm_score"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TripletFileError(f"line {lineno}: {exc}") from exc
    return records


def filter_by_docs(records: Iterable[TripletRecord], docs: Iterable[str]) -> list[TripletRecord]:
    wanted = set(docs)
    return [r for r in records if r.doc_id in wanted]


def carve_validation(
    train_docs: Sequence[str], n: int = 5, seed: int = 42
) -> tuple[list[str], list[str]]:
    """Deterministically hold out n documents for checkpoint selection.

    The carved set never overlaps the remaining training documents and the
    same seed always carves the same documents.
    """
    unique = sorted(set(train_docs))
    if n == 0:
        return unique, []
    if len(unique) <= n:
        raise ValueError(f"cannot hold out {n} of {len(unique)} documents")
    rng = random.Random(seed)
    validation = sorted(rng.sample(unique, n))
    held = set(validation)
    return [d for d in unique if d not in held], validation


class NoDuplicatesBatchSampler:
    """Seeded batches that never repeat an anchor text within one batch.

    Items whose anchor already appears in the current batch defer to a later
    batch, so every example is still used exactly once per epoch.
    """

    def __init__(self, anchors: Sequence[str], batch_size: int, seed: int = 42):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.anchors = list(anchors)
        self.batch_size = batch_size
        self.seed = seed

    def epoch_batches(self, epoch: int) -> Iterator[list[int]]:
        order = list(range(len(self.anchors)))
        random.Random(f"{self.seed}:{epoch}").shuffle(order)
        remaining = order
        while remaining:
            batch: list[int] = []
            seen: set[str] = set()
            deferred: list[int] = []
            for idx in remaining:
                anchor = self.anchors[idx]
                if len(batch) < self.batch_size and anchor not in seen:
                    seen.add(anchor)
                    batch.append(idx)
                else:
                    deferred.append(idx)
            yield batch
            remaining = deferred

    def steps_per_epoch(self) -> int:
        return sum(1 for _ in self.epoch_batches(0))
