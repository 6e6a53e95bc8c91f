"""Judge prompt rendering, score parsing, retries, caching, and concurrency."""

import itertools

import pytest

from esgidx.errors import JudgeFailureError, JudgePromptError, UnparseableResponseError
from esgidx.judge import (
    JudgeClient,
    JudgeConfig,
    JudgedPair,
    judge_triplets,
    parse_score,
    render_judge_prompt,
)
from esgidx.triplets import QueryRecord, build_triplets
from helpers import MockChatServer

from test_triplets import _triplet_setup


def quick_config(url, tmp_path=None, **overrides) -> JudgeConfig:
    kwargs = dict(
        endpoint_url=url,
        model_name="mock-judge",
        max_retries=3,
        timeout=5.0,
        concurrency_limit=4,
        cache_path=(tmp_path / "cache.jsonl") if tmp_path else None,
        backoff_base=0.001,
    )
    kwargs.update(overrides)
    return JudgeConfig(**kwargs)


class TestRenderPrompt:
    def test_slots_filled_and_instruction_present(self):
        prompt = render_judge_prompt("GRI 305-1: Direct (Scope 1) GHG emissions",
                                     "Scope 1 emissions table for 2023")
        assert "GRI 305-1: Direct (Scope 1) GHG emissions" in prompt
        assert "Scope 1 emissions table for 2023" in prompt
        assert "The output should be an integer" in prompt
        assert "Relevancy Score (1-5):" in prompt

    def test_no_recursive_substitution(self):
        prompt = render_judge_prompt("query with {chunk} inside", "chunk body")
        # the user text's brace survives; the template slot got the chunk body
        assert "query with {chunk} inside" in prompt
        assert prompt.count("chunk body") == 1

    def test_byte_stable(self):
        a = render_judge_prompt("q text", "c text")
        b = render_judge_prompt("q text", "c text")
        assert a == b

    def test_empty_inputs_rejected(self):
        with pytest.raises(JudgePromptError):
            render_judge_prompt("", "chunk")
        with pytest.raises(JudgePromptError):
            render_judge_prompt("query", "   ")


class TestParseScore:
    @pytest.mark.parametrize(
        "response,expected",
        [
            ("4", 4),
            ("Relevancy Score (1-5): 3", 3),
            ("On a scale of 0-5 I would say 2.", 2),
            ("Score: 5", 5),
            ("  0\n", 0),
            ("rating = 4/5", 4),
        ],
    )
    def test_parses(self, response, expected):
        assert parse_score(response) == expected

    @pytest.mark.parametrize("response", ["highly relevant", "", "10", "6", "3.5", "-3", "0-5"])
    def test_unparseable(self, response):
        with pytest.raises(UnparseableResponseError):
            parse_score(response)


class TestJudgedPair:
    def test_score_range_enforced(self):
        with pytest.raises(ValueError):
            JudgedPair("q", "c", 6, "m", "6")
        with pytest.raises(ValueError):
            JudgedPair("q", "c", -1, "m", "-1")


class TestJudgeClient:
    def test_mock_always_five(self, tmp_path):
        with MockChatServer(reply=lambda _: "5") as server:
            client = JudgeClient(quick_config(server.url, tmp_path))
            pair = client.score_pair("q1", "query text", "c1", "chunk text")
        assert pair.score == 5
        assert pair.model_tag == "mock-judge"

    def test_second_call_served_from_cache(self, tmp_path):
        with MockChatServer(reply=lambda _: "4") as server:
            client = JudgeClient(quick_config(server.url, tmp_path))
            first = client.score_pair("q1", "query text", "c1", "chunk text")
            second = client.score_pair("q1", "query text", "c1", "chunk text")
            assert server.stats.calls == 1
        assert first == second

    def test_cache_survives_restart(self, tmp_path):
        with MockChatServer(reply=lambda _: "3") as server:
            cfg = quick_config(server.url, tmp_path)
            JudgeClient(cfg).score_pair("q1", "query text", "c1", "chunk text")
            reopened = JudgeClient(cfg)
            pair = reopened.score_pair("q1", "query text", "c1", "chunk text")
            assert server.stats.calls == 1
        assert pair.score == 3
        assert reopened.calls_made == 0

    def test_cache_keyed_by_model_tag(self, tmp_path):
        with MockChatServer(reply=lambda _: "2") as server:
            cfg_a = quick_config(server.url, tmp_path)
            JudgeClient(cfg_a).score_pair("q1", "query text", "c1", "chunk text")
            cfg_b = quick_config(server.url, tmp_path, model_name="other-judge")
            JudgeClient(cfg_b).score_pair("q1", "query text", "c1", "chunk text")
            assert server.stats.calls == 2

    def test_retry_until_parseable(self, tmp_path):
        answers = itertools.chain(["no score here", "still nothing"], itertools.repeat("2"))
        with MockChatServer(reply=lambda _: next(answers)) as server:
            client = JudgeClient(quick_config(server.url, tmp_path, max_retries=3))
            pair = client.score_pair("q1", "query text", "c1", "chunk text")
            assert server.stats.calls == 3
        assert pair.score == 2

    def test_transport_failures_retried(self, tmp_path):
        with MockChatServer(reply=lambda _: "2", fail_first=2) as server:
            client = JudgeClient(quick_config(server.url, tmp_path, max_retries=3))
            pair = client.score_pair("q1", "query text", "c1", "chunk text")
        assert pair.score == 2

    def test_rate_limit_honored(self, tmp_path):
        delays = []
        with MockChatServer(reply=lambda _: "1", rate_limit_first=1) as server:
            client = JudgeClient(quick_config(server.url, tmp_path), sleep=delays.append)
            pair = client.score_pair("q1", "query text", "c1", "chunk text")
        assert pair.score == 1
        assert delays and delays[0] >= 0.01  # honored the Retry-After hint

    def test_retries_exhausted_names_pair(self, tmp_path):
        with MockChatServer(reply=lambda _: "no digits") as server:
            client = JudgeClient(quick_config(server.url, tmp_path, max_retries=1))
            with pytest.raises(JudgeFailureError) as exc:
                client.score_pair("q9", "query text", "c9", "chunk text")
        assert exc.value.query_id == "q9"
        assert exc.value.chunk_id == "c9"

    def test_bounded_concurrency(self, tmp_path):
        pairs = [(f"q{i}", "query text", f"c{i}", f"chunk {i}") for i in range(24)]
        with MockChatServer(reply=lambda _: "4", hold_ms=30) as server:
            client = JudgeClient(quick_config(server.url, tmp_path, concurrency_limit=3))
            judged, failures = client.score_many(pairs)
            peak = server.stats.peak_in_flight
        assert not failures
        assert len(judged) == 24
        assert peak <= 3

    def test_one_failure_does_not_abort_batch(self, tmp_path):
        def reply(prompt):
            return "no score" if "poison" in prompt else "5"

        pairs = [("q1", "good query", "c1", "good chunk"),
                 ("q2", "poison query", "c2", "poison chunk"),
                 ("q3", "good query", "c3", "another chunk")]
        with MockChatServer(reply=reply) as server:
            client = JudgeClient(quick_config(server.url, tmp_path, max_retries=0))
            judged, failures = client.score_many(pairs)
        assert [p.query_id for p in judged] == ["q1", "q3"]
        assert [f.query_id for f in failures] == ["q2"]


class TestJudgeTriplets:
    def test_scores_positives_only(self, tmp_path):
        doc, query, qrels = _triplet_setup(relevant=(1, 2))
        build = build_triplets([query], qrels, {"doc": doc}, rng_seed=1)

        def reply(prompt):
            # every judged chunk must be a positive (pages 1-2 of the doc)
            assert "page 1" in prompt or "page 2" in prompt
            return "4"

        with MockChatServer(reply=reply) as server:
            client = JudgeClient(quick_config(server.url, tmp_path))
            judged, failures = judge_triplets(build.triplets, client)
        assert not failures
        assert all(t.llm_score == 4 for t in judged)
        assert len(judged) == len(build.triplets)

    def test_rerun_uses_cache(self, tmp_path):
        doc, query, qrels = _triplet_setup(relevant=(1, 2))
        build = build_triplets([query], qrels, {"doc": doc}, rng_seed=1)
        with MockChatServer(reply=lambda _: "3") as server:
            cfg = quick_config(server.url, tmp_path)
            first, _ = judge_triplets(build.triplets, JudgeClient(cfg))
            calls_after_first = server.stats.calls
            second, _ = judge_triplets(build.triplets, JudgeClient(cfg))
            assert server.stats.calls == calls_after_first
        assert first == second
