"""Synthetic triplet corpora for trainer tests.

The separable set keeps query vocabularies and chunk vocabularies fully
disjoint, so an untrained encoder scores at chance and only a learned
alignment between the two vocabularies can raise cosine accuracy.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

QUERY_VOCAB = [
    ["carbon", "emission", "scope", "greenhouse", "footprint", "ghg"],
    ["workforce", "diversity", "training", "employee", "safety", "labor"],
]
DOC_VOCAB = [
    ["tonnes", "combustion", "fleet", "fuel", "smokestack", "flue"],
    ["headcount", "payroll", "union", "apprentice", "ergonomic", "shift"],
]


def toy_triplet_records(
    n_docs: int = 10, per_doc: int = 20, seed: int = 5
) -> list[dict]:
    rng = random.Random(seed)
    records = []
    serial = 0
    for d in range(n_docs):
        doc_id = f"toy-{d:02d}"
        for i in range(per_doc):
            topic = (d * per_doc + i) % 2
            serial += 1
            noise = lambda: f"x{serial}n{rng.randrange(10_000)}"  # noqa: E731
            query_words = rng.sample(QUERY_VOCAB[topic], 4) + [noise(), noise()]
            pos_words = rng.sample(DOC_VOCAB[topic], 4) + [noise(), noise(), noise()]
            neg_words = rng.sample(DOC_VOCAB[1 - topic], 4) + [noise(), noise(), noise()]
            rng.shuffle(query_words)
            rng.shuffle(pos_words)
            rng.shuffle(neg_words)
            records.append(
                {
                    "query_id": f"{doc_id}#Q{i}",
                    "query_text": " ".join(query_words),
                    "doc_id": doc_id,
                    "positive": {
                        "chunk_id": f"{doc_id}:p{i + 1}:c0",
                        "page": i + 1,
                        "text": " ".join(pos_words),
                    },
                    "negative": {
                        "chunk_id": f"{doc_id}:p{per_doc + i + 1}:c0",
                        "page": per_doc + i + 1,
                        "text": " ".join(neg_words),
                    },
                }
            )
    return records


def write_triplet_file(records: list[dict], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    return path


def random_token_records(n: int = 1200, seed: int = 9) -> list[dict]:
    """Fully random token soup; no learnable or accidental structure."""
    rng = random.Random(seed)

    def words():
        return " ".join(f"w{rng.randrange(100_000)}" for _ in range(8))

    return [
        {
            "query_id": f"r-{i}#Q",
            "query_text": words(),
            "doc_id": f"r-{i % 20}",
            "positive": {"chunk_id": f"r:p{i}:c0", "page": i + 1, "text": words()},
            "negative": {"chunk_id": f"r:p{i}:c1", "page": i + 2, "text": words()},
        }
        for i in range(n)
    ]
