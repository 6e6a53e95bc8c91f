"""Triplet-file parsing, validation carving, and batch sampling."""

import pytest

from esgtune.data import (
    NoDuplicatesBatchSampler,
    TripletBatchView,
    TripletFileError,
    carve_validation,
    filter_by_docs,
    read_triplet_file,
)
from helpers import toy_triplet_records, write_triplet_file


class TestReadTripletFile:
    def test_round_trip(self, tmp_path):
        records = toy_triplet_records(n_docs=2, per_doc=3)
        path = write_triplet_file(records, tmp_path / "t.jsonl")
        loaded = read_triplet_file(path)
        assert len(loaded) == 6
        assert loaded[0].query_text == records[0]["query_text"]
        assert loaded[0].positive_text == records[0]["positive"]["text"]
        assert loaded[0].doc_id == "toy-00"

    def test_malformed_line_names_lineno(self, tmp_path):
        path = tmp_path / "t.jsonl"
        good = write_triplet_file(toy_triplet_records(1, 1), tmp_path / "g.jsonl")
        path.write_text(good.read_text() + '{"query_id": "broken"}\n')
        with pytest.raises(TripletFileError, match="line 2"):
            read_triplet_file(path)

    def test_llm_score_optional(self, tmp_path):
        records = toy_triplet_records(1, 2)
        records[0]["llm_score"] = 4
        loaded = read_triplet_file(write_triplet_file(records, tmp_path / "t.jsonl"))
        assert loaded[0].llm_score == 4
        assert loaded[1].llm_score is None


class TestCarveValidation:
    def test_58_to_53_plus_5(self):
        docs = [f"doc-{i:03d}" for i in range(58)]
        train, validation = carve_validation(docs, n=5, seed=1)
        assert len(train) == 53
        assert len(validation) == 5
        assert not set(train) & set(validation)
        assert sorted(train + validation) == docs

    def test_n_zero_identity(self):
        docs = ["a", "b", "c"]
        train, validation = carve_validation(docs, n=0)
        assert train == docs
        assert validation == []

    def test_same_seed_same_carve(self):
        docs = [f"d{i}" for i in range(20)]
        assert carve_validation(docs, 5, seed=7) == carve_validation(docs, 5, seed=7)
        assert carve_validation(docs, 5, seed=7) != carve_validation(docs, 5, seed=8)

    def test_too_few_docs_rejected(self):
        with pytest.raises(ValueError):
            carve_validation(["a", "b"], n=2)


class TestBatchSampler:
    def test_no_duplicate_anchors_within_batch(self):
        anchors = [f"anchor-{i % 7}" for i in range(40)]  # heavy duplication
        sampler = NoDuplicatesBatchSampler(anchors, batch_size=8, seed=3)
        seen_total = []
        for batch in sampler.epoch_batches(0):
            batch_anchors = [anchors[i] for i in batch]
            assert len(batch_anchors) == len(set(batch_anchors))
            seen_total.extend(batch)
        assert sorted(seen_total) == list(range(40))  # every example used once

    def test_deterministic_per_epoch(self):
        anchors = [f"a{i}" for i in range(30)]
        sampler = NoDuplicatesBatchSampler(anchors, batch_size=4, seed=11)
        assert list(sampler.epoch_batches(2)) == list(sampler.epoch_batches(2))
        assert list(sampler.epoch_batches(0)) != list(sampler.epoch_batches(1))

    def test_steps_per_epoch_counts_batches(self):
        anchors = [f"a{i}" for i in range(10)]
        sampler = NoDuplicatesBatchSampler(anchors, batch_size=4, seed=0)
        assert sampler.steps_per_epoch() == 3


class TestViews:
    def test_alignment_enforced(self):
        with pytest.raises(ValueError):
            TripletBatchView(anchors=["a"], positives=[], negatives=["n"])

    def test_filter_by_docs(self, tmp_path):
        records = read_triplet_file(
            write_triplet_file(toy_triplet_records(3, 2), tmp_path / "t.jsonl")
        )
        kept = filter_by_docs(records, ["toy-01"])
        assert {r.doc_id for r in kept} == {"toy-01"}
        assert len(kept) == 2
