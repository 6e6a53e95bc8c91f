"""Relevance judging of (query, chunk) pairs through a chat-completion endpoint.

Scores run 0-5. Results are cached keyed by (model_tag, query_id, chunk_id)
so re-running a judging job over a warm cache makes zero network calls.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .corpus import Chunk
from .errors import JudgeFailureError, JudgePromptError, UnparseableResponseError
from .triplets import QueryRecord, Triplet

JUDGE_PROMPT_TEMPLATE = """\
Given the following [query], and a [text chunk] from an ESG report, please rate the relevancy of the chunk to the disclosure on a scale of 0-5, in terms of being able to provide evidence for the disclosure. Provide higher rating if the chunk has enough evidence to answer the query.

- The output should be a single number between 0 and 5. 0 means not relevant at all, 5 means highly relevant.
- The output should be an integer

[query]
{disclosure}
[text chunk]
{chunk}

Relevancy Score (1-5): <YOUR ANSWER HERE>"""

# A standalone score digit: not glued to another digit, a decimal tail, or a
# range dash, so the template's own "(1-5)" scaffold never parses as a score.
_SCORE_RE = re.compile(r"(?<![\d.\-])([0-5])(?!\d|\.\d|-)")

_SLOT_RE = re.compile(r"\{(disclosure|chunk)\}")


@dataclass(frozen=True)
class JudgedPair:
    query_id: str
    chunk_id: str
    score: int
    model_tag: str
    raw_response: str

    def __post_init__(self):
        if not 0 <= self.score <= 5:
            raise ValueError(f"score {self.score} outside [0, 5]")


@dataclass
class JudgeConfig:
    endpoint_url: str
    model_name: str
    max_retries: int = 3
    timeout: float = 60.0
    concurrency_limit: int = 4
    cache_path: Path | str | None = None
    backoff_base: float = 0.5
    api_key_env: str = "JUDGE_API_KEY"

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")


def render_judge_prompt(query_text: str, chunk_text: str) -> str:
    """Fill the relevance-prompt slots, byte-stable across runs.

    Substitution happens in a single pass over the template, so placeholder
    text occurring inside the query or chunk is never re-expanded.
    """
    if not query_text.strip() or not chunk_text.strip():
        raise JudgePromptError("query and chunk text must be non-empty")
    slots = {"disclosure": query_text, "chunk": chunk_text}
    return _SLOT_RE.sub(lambda m: slots[m.group(1)], JUDGE_PROMPT_TEMPLATE)


def parse_score(response: str) -> int:
    """Extract the first standalone integer in [0, 5] from a judge response."""
    m = _SCORE_RE.search(response)
    if not m:
        raise UnparseableResponseError(f"no score in judge response: {response[:200]!r}")
    return int(m.group(1))


class JudgeCache:
    """Append-only JSONL cache of judged pairs; reads are lock-free snapshots."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str, str], JudgedPair] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                pair = JudgedPair(
                    query_id=rec["query_id"],
                    chunk_id=rec["chunk_id"],
                    score=rec["score"],
                    model_tag=rec["model_tag"],
                    raw_response=rec.get("raw_response", ""),
                )
                self._entries[(pair.model_tag, pair.query_id, pair.chunk_id)] = pair

    def get(self, model_tag: str, query_id: str, chunk_id: str) -> JudgedPair | None:
        return self._entries.get((model_tag, query_id, chunk_id))

    def put(self, pair: JudgedPair) -> None:
        with self._lock:
            self._entries[(pair.model_tag, pair.query_id, pair.chunk_id)] = pair
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {
                                "query_id": pair.query_id,
                                "chunk_id": pair.chunk_id,
                                "score": pair.score,
                                "model_tag": pair.model_tag,
                                "raw_response": pair.raw_response,
                            },
                            ensure_ascii=False,
                            sort_keys=True,
                        )
                    )
                    fh.write("\n")

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class JudgeFailure:
    query_id: str
    chunk_id: str
    error: str


class JudgeClient:
    """Shareable scoring client with retry, backoff, and a warm cache."""

    def __init__(
        self,
        cfg: JudgeConfig,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.cache = JudgeCache(cfg.cache_path)
        self._sleep = sleep
        self._session = requests.Session()
        self._counter_lock = threading.Lock()
        self.calls_made = 0

    # -- wire ---------------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _complete(self, prompt: str) -> str:
        """One chat-completion round trip; raises on transport trouble."""
        with self._counter_lock:
            self.calls_made += 1
        response = self._session.post(
            self.cfg.endpoint_url,
            json={
                "model": self.cfg.model_name,
                "messages": [{"role": "user", "content": prompt}],
                # most deterministic decoding the endpoint offers
                "temperature": 0,
            },
            headers=self._headers(),
            timeout=self.cfg.timeout,
        )
        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After")
            raise _RateLimited(float(retry_after) if retry_after else None)
        response.raise_for_status()
        payload = response.json()
        choice = payload["choices"][0]
        if "message" in choice:
            return choice["message"]["content"]
        return choice["text"]

    # -- scoring ------------------------------------------------------------

    def score_pair(
        self, query_id: str, query_text: str, chunk_id: str, chunk_text: str
    ) -> JudgedPair:
        cached = self.cache.get(self.cfg.model_name, query_id, chunk_id)
        if cached is not None:
            return cached
        prompt = render_judge_prompt(query_text, chunk_text)
        last_error = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            delay = self.cfg.backoff_base * (2**attempt)
            try:
                raw = self._complete(prompt)
                score = parse_score(raw)
            except _RateLimited as exc:
                last_error = "rate limited"
                if exc.retry_after is not None:
                    delay = max(delay, exc.retry_after)
            except (requests.RequestException, UnparseableResponseError, KeyError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                pair = JudgedPair(
                    query_id=query_id,
                    chunk_id=chunk_id,
                    score=score,
                    model_tag=self.cfg.model_name,
                    raw_response=raw,
                )
                self.cache.put(pair)
                return pair
            if attempt < self.cfg.max_retries:
                self._sleep(delay)
        raise JudgeFailureError(query_id, chunk_id, last_error)

    def llm_score(self, query: QueryRecord, chunk: Chunk) -> JudgedPair:
        return self.score_pair(query.query_id, query.query_text, chunk.chunk_id, chunk.text)

    def score_many(
        self, pairs: Sequence[tuple[str, str, str, str]]
    ) -> tuple[list[JudgedPair], list[JudgeFailure]]:
        """Score (query_id, query_text, chunk_id, chunk_text) tuples with at
        most concurrency_limit requests in flight; one failure never aborts
        the batch."""
        results: dict[int, JudgedPair] = {}
        failures: dict[int, JudgeFailure] = {}

        def work(idx: int, item: tuple[str, str, str, str]) -> None:
            query_id, query_text, chunk_id, chunk_text = item
            try:
                results[idx] = self.score_pair(query_id, query_text, chunk_id, chunk_text)
            except (JudgeFailureError, JudgePromptError) as exc:
                failures[idx] = JudgeFailure(query_id, chunk_id, str(exc))

        with ThreadPoolExecutor(max_workers=self.cfg.concurrency_limit) as pool:
            futures = [pool.submit(work, i, item) for i, item in enumerate(pairs)]
            for future in futures:
                future.result()
        ordered = [results[i] for i in sorted(results)]
        failed = [failures[i] for i in sorted(failures)]
        return ordered, failed


class _RateLimited(Exception):
    def __init__(self, retry_after: float | None):
        self.retry_after = retry_after
        super().__init__("rate limited")


def llm_score(query: QueryRecord, chunk: Chunk, cfg: JudgeConfig) -> JudgedPair:
    """One-shot scoring; batch jobs should hold a JudgeClient instead."""
    return JudgeClient(cfg).llm_score(query, chunk)


def judge_triplets(
    triplets: Sequence[Triplet], client: JudgeClient
) -> tuple[list[Triplet], list[JudgeFailure]]:
    """Attach judge scores to triplet positives (negatives are never judged)."""
    pairs = [
        (t.query.query_id, t.query.query_text, t.positive.chunk_id, t.positive.text)
        for t in triplets
    ]
    judged, failures = client.score_many(pairs)
    by_key = {(p.query_id, p.chunk_id): p.score for p in judged}
    out: list[Triplet] = []
    for t in triplets:
        score = by_key.get((t.query.query_id, t.positive.chunk_id))
        if score is not None:
            out.append(t.with_score(score))
    return out, failures
