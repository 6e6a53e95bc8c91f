"""Pipeline subcommands: ingest, split, build-triplets, judge, embed,
retrieve, eval, index, overlap.

Each stage reads and writes only its declared artifacts under the output
directory, records a content-hash manifest, and becomes a no-op when
inputs, parameters, and outputs are all unchanged.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
from filelock import FileLock

from . import corpus as corpus_mod
from . import evalrank, indexer, retrieval, standards
from . import triplets as triplets_mod
from .config import PipelineConfig, load_config
from .errors import ConfigError, EsgidxError, MissingArtifactError
from .judge import JudgeClient, judge_triplets


class EventLog:
    """Structured stage events, flushed as line-delimited JSON."""

    def __init__(self, path: Path):
        self.path = path
        self.records: list[dict] = []

    def emit(self, stage: str, event: str, doc_id: str = "", **extra) -> None:
        self.records.append({"stage": stage, "doc_id": doc_id, "event": event, **extra})

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
                fh.write("\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _require(path: Path | None, label: str, producer: str) -> Path:
    if path is None:
        raise ConfigError(f"config lacks a path for {label}")
    if not path.exists():
        raise MissingArtifactError(str(path), producer)
    return path


class StageRunner:
    """Manifest-checked execution of one subcommand."""

    def __init__(self, name: str, cfg: PipelineConfig, params: dict):
        self.name = name
        self.cfg = cfg
        self.params = params
        self.out_dir = cfg.paths.output_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = EventLog(self.out_dir / "logs" / f"{name}.events.jsonl")

    def _manifest_path(self) -> Path:
        return self.out_dir / f"{self.name}.manifest.json"

    def _fingerprint(self, inputs: list[Path]) -> dict:
        return {
            "stage": self.name,
            "config_hash": self.cfg.config_hash,
            "params": {k: str(v) for k, v in sorted(self.params.items())},
            "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        }

    def up_to_date(self, inputs: list[Path]) -> bool:
        manifest_path = self._manifest_path()
        if not manifest_path.exists():
            return False
        try:
            recorded = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            return False
        candidate = self._fingerprint(inputs)
        if {k: recorded.get(k) for k in candidate} != candidate:
            return False
        for out_path, digest in recorded.get("outputs", {}).items():
            if not Path(out_path).exists() or _sha256(Path(out_path)) != digest:
                return False
        return True

    def finish(self, inputs: list[Path], outputs: list[Path]) -> None:
        manifest = self._fingerprint(inputs)
        manifest["outputs"] = {str(p): _sha256(p) for p in sorted(outputs) if p.exists()}
        self._manifest_path().write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.log.flush()

    def lock(self) -> FileLock:
        return FileLock(self.out_dir / ".esgidx.lock")


def _load_docs_from_chunks(cfg: PipelineConfig) -> dict[str, corpus_mod.Document]:
    reports = _require(cfg.paths.reports, "paths.reports", "ingest")
    chunks_path = _require(cfg.paths.output_dir / "chunks.jsonl", "chunks", "ingest")
    metas = corpus_mod.read_report_metas(reports)
    chunks = corpus_mod.read_chunks_jsonl(chunks_path)
    by_doc: dict[str, list[corpus_mod.Chunk]] = {}
    for chunk in chunks:
        by_doc.setdefault(chunk.doc_id, []).append(chunk)
    return {
        meta.doc_id: corpus_mod.document_from_chunks(meta, by_doc.get(meta.doc_id, []))
        for meta in metas
    }


def _load_catalog(cfg: PipelineConfig) -> standards.Catalog:
    if cfg.paths.catalog is not None:
        _require(cfg.paths.catalog, "paths.catalog", "(provide the catalog file)")
        return standards.read_catalog(cfg.paths.catalog)
    indices = _require(cfg.paths.indices, "paths.indices", "(provide the index file)")
    return standards.catalog_from_index_rows(standards.read_content_index_rows(indices))


def _make_provider(cfg: PipelineConfig, kind_override: str | None = None):
    provider_cfg = cfg.provider
    kind = kind_override or provider_cfg.kind
    if kind == "test":
        return retrieval.HashEmbeddingProvider(dim=provider_cfg.dim, seed=provider_cfg.seed)
    if kind == "remote":
        if not provider_cfg.endpoint_url:
            raise ConfigError("provider.endpoint_url required for the remote provider")
        return retrieval.RemoteEmbeddingProvider(
            endpoint_url=provider_cfg.endpoint_url,
            model=provider_cfg.model,
            batch_size=provider_cfg.batch_size,
            api_key_env=provider_cfg.api_key_env,
        )
    if kind == "file":
        vectors = provider_cfg.vectors
        if vectors is None:
            raise ConfigError("provider.vectors path required for the file provider")
        _require(Path(vectors), "provider.vectors", "(export vectors first)")
        return retrieval.FileVectorProvider(vectors)
    raise ConfigError(f"unknown provider kind {kind!r}")


def _make_judge_client(cfg: PipelineConfig) -> JudgeClient:
    if cfg.judge is None:
        raise ConfigError("config lacks a judge section")
    return JudgeClient(cfg.judge)


pass_cfg = click.make_pass_decorator(PipelineConfig)


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Pipeline YAML.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--strict/--lenient", "strict", default=True,
              help="Content-index validation mode.")
@click.pass_context
def main(ctx, config_path, seed, strict):
    """Disclosure-index weak supervision and retrieval evaluation pipeline."""
    try:
        cfg = load_config(config_path, seed_override=seed)
    except EsgidxError as exc:
        _fail(exc)
    ctx.obj = cfg
    ctx.meta["strict"] = strict


def _fail(exc: Exception) -> None:
    report = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(report, sort_keys=True), err=True)
    sys.exit(1)


def _guard(fn):
    """Convert pipeline errors into machine-readable failures."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EsgidxError as exc:
            _fail(exc)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@main.command()
@pass_cfg
@_guard
def ingest(cfg: PipelineConfig):
    """Normalize and chunk the page-record corpus."""
    corpus_path = _require(cfg.paths.corpus, "paths.corpus", "(provide the corpus file)")
    reports_path = _require(cfg.paths.reports, "paths.reports", "(provide report metadata)")
    runner = StageRunner("ingest", cfg, {"size": cfg.chunking.size, "overlap": cfg.chunking.overlap})
    inputs = [corpus_path, reports_path]
    if runner.up_to_date(inputs):
        click.echo("ingest: up to date")
        return
    with runner.lock():
        metas = corpus_mod.read_report_metas(reports_path)
        docs = corpus_mod.ingest_corpus(
            corpus_mod.read_page_records(corpus_path),
            metas,
            size=cfg.chunking.size,
            overlap=cfg.chunking.overlap,
        )
        for doc_id in sorted(docs):
            doc = docs[doc_id]
            empty = [p.page for p in doc.pages if not p.normalized_text]
            runner.log.emit("ingest", "document_ingested", doc_id=doc_id,
                            pages=len(doc.pages), chunks=len(doc.chunks), empty_pages=empty)
        out_path = cfg.paths.output_dir / "chunks.jsonl"
        n = corpus_mod.write_chunks_jsonl((docs[d] for d in sorted(docs)), out_path)
        runner.finish(inputs, [out_path])
    click.echo(f"ingest: {len(docs)} documents, {n} chunks -> {out_path}")


@main.command()
@pass_cfg
@_guard
def split(cfg: PipelineConfig):
    """Write the temporal/cross-standard split manifest."""
    reports_path = _require(cfg.paths.reports, "paths.reports", "(provide report metadata)")
    params = {"test_n": cfg.split.test_n, "dev_n": cfg.split.dev_n,
              "cutoff": cfg.split.cutoff, "seed": cfg.seed}
    runner = StageRunner("split", cfg, params)
    inputs = [reports_path]
    if runner.up_to_date(inputs):
        click.echo("split: up to date")
        return
    with runner.lock():
        metas = corpus_mod.read_report_metas(reports_path)
        manifest = triplets_mod.temporal_split(
            metas, test_n=cfg.split.test_n, dev_n=cfg.split.dev_n,
            year_cutoff=cfg.split.cutoff, seed=cfg.seed,
        )
        out_path = cfg.paths.output_dir / "split.json"
        triplets_mod.write_split_manifest(manifest, out_path)
        runner.finish(inputs, [out_path])
    click.echo(
        f"split: train={len(manifest.train)} dev={len(manifest.dev)} "
        f"test_gri={len(manifest.test_gri)} test_esrs={len(manifest.test_esrs)}"
    )


@main.command("build-triplets")
@click.pass_context
@_guard
def build_triplets_cmd(ctx):
    """Build queries, qrels, and contrastive triplets from content indices."""
    cfg: PipelineConfig = ctx.obj
    strict = ctx.meta.get("strict", True)
    indices_path = _require(cfg.paths.indices, "paths.indices", "(provide the index file)")
    reports_path = _require(cfg.paths.reports, "paths.reports", "(provide report metadata)")
    chunks_path = _require(cfg.paths.output_dir / "chunks.jsonl", "chunks.jsonl", "ingest")
    runner = StageRunner("build-triplets", cfg, {"seed": cfg.seed, "strict": strict})
    inputs = [indices_path, reports_path, chunks_path]
    if cfg.paths.catalog is not None:
        inputs.append(_require(cfg.paths.catalog, "paths.catalog", "(provide the catalog)"))
    if runner.up_to_date(inputs):
        click.echo("build-triplets: up to date")
        return
    with runner.lock():
        docs = _load_docs_from_chunks(cfg)
        catalog = _load_catalog(cfg)
        rows = standards.read_content_index_rows(indices_path)
        entries: list[standards.ContentIndexEntry] = []
        for doc_id in sorted({r["doc_id"] for r in rows}):
            if doc_id not in docs:
                raise ConfigError(f"content index references unknown doc_id {doc_id!r}")
            doc_rows = [r for r in rows if r["doc_id"] == doc_id]
            parse = standards.parse_content_index(doc_rows, catalog, docs[doc_id], strict=strict)
            for warning in parse.warnings:
                runner.log.emit("build-triplets", "page_out_of_range", doc_id=doc_id,
                                detail=warning)
            entries.extend(parse.entries)
        metas = {d: docs[d].meta for d in docs}
        qrels_build = triplets_mod.build_qrels(entries, catalog, metas)
        for skip in qrels_build.skipped:
            runner.log.emit("build-triplets", "entry_skipped", doc_id=skip.doc_id,
                            disclosure_id=skip.disclosure_id, reason=skip.reason)
        build = triplets_mod.build_triplets(
            qrels_build.queries, qrels_build.qrels, docs, rng_seed=cfg.seed
        )
        for drop in build.dropped:
            runner.log.emit("build-triplets", "triplet_dropped",
                            doc_id=drop.query_id.split("#", 1)[0],
                            query_id=drop.query_id, reason=drop.reason, detail=drop.detail)
        out_dir = cfg.paths.output_dir
        queries_path = out_dir / "queries.jsonl"
        qrels_path = out_dir / "qrels.txt"
        triplets_path = out_dir / "triplets.jsonl"
        triplets_mod.write_queries_jsonl(qrels_build.queries, queries_path)
        triplets_mod.write_qrels(qrels_build.qrels, qrels_path)
        triplets_mod.write_triplets_jsonl(build.triplets, triplets_path)
        runner.finish(inputs, [queries_path, qrels_path, triplets_path])
    click.echo(
        f"build-triplets: {len(qrels_build.queries)} queries, "
        f"{len(build.triplets)} triplets ({len(qrels_build.skipped)} entries skipped, "
        f"{len(build.dropped)} drops)"
    )


@main.command("judge")
@click.option("--threshold", type=int, default=None,
              help="Also write triplets filtered at this score.")
@pass_cfg
@_guard
def judge_cmd(cfg: PipelineConfig, threshold):
    """Score triplet positives with the judge endpoint (cached)."""
    triplets_path = _require(
        cfg.paths.output_dir / "triplets.jsonl", "triplets.jsonl", "build-triplets"
    )
    threshold = cfg.threshold if threshold is None else threshold
    runner = StageRunner("judge", cfg, {"threshold": threshold})
    inputs = [triplets_path]
    if runner.up_to_date(inputs):
        click.echo("judge: up to date")
        return
    with runner.lock():
        client = _make_judge_client(cfg)
        all_triplets = triplets_mod.read_triplets_jsonl(triplets_path)
        judged, failures = judge_triplets(all_triplets, client)
        for failure in failures:
            runner.log.emit("judge", "judge_failure",
                            doc_id=failure.query_id.split("#", 1)[0],
                            query_id=failure.query_id, chunk_id=failure.chunk_id,
                            detail=failure.error)
        out_dir = cfg.paths.output_dir
        judged_path = out_dir / "triplets_judged.jsonl"
        triplets_mod.write_triplets_jsonl(judged, judged_path)
        outputs = [judged_path]
        filtered_path = out_dir / "triplets_filtered.jsonl"
        kept = triplets_mod.filter_triplets(judged, threshold=threshold)
        triplets_mod.write_triplets_jsonl(kept, filtered_path)
        outputs.append(filtered_path)
        runner.finish(inputs, outputs)
    click.echo(
        f"judge: scored {len(judged)} triplets ({client.calls_made} endpoint calls, "
        f"{len(failures)} failures); {len(kept)} pass threshold {threshold}"
    )


@main.command()
@click.option("--provider", "provider_kind", type=click.Choice(["remote", "file", "test"]),
              default=None, help="Override the configured provider.")
@pass_cfg
@_guard
def embed(cfg: PipelineConfig, provider_kind):
    """Embed chunks and queries into vector files."""
    chunks_path = _require(cfg.paths.output_dir / "chunks.jsonl", "chunks.jsonl", "ingest")
    queries_path = _require(
        cfg.paths.output_dir / "queries.jsonl", "queries.jsonl", "build-triplets"
    )
    provider = _make_provider(cfg, provider_kind)
    runner = StageRunner("embed", cfg, {"provider": provider.tag})
    inputs = [chunks_path, queries_path]
    if runner.up_to_date(inputs):
        click.echo("embed: up to date")
        return
    with runner.lock():
        chunks = corpus_mod.read_chunks_jsonl(chunks_path)
        queries = triplets_mod.read_queries_jsonl(queries_path)
        chunk_vecs = retrieval.embed_batch(
            [c.text for c in chunks], provider, ids=[c.chunk_id for c in chunks]
        )
        prefix = cfg.provider.query_prefix
        query_vecs = retrieval.embed_batch(
            [prefix + q.query_text for q in queries], provider,
            ids=[q.query_id for q in queries],
        )
        dim = chunk_vecs[0].dim if chunk_vecs else cfg.provider.dim
        out_dir = cfg.paths.output_dir
        chunk_vec_path = out_dir / "vectors_chunks.tsv"
        query_vec_path = out_dir / "vectors_queries.tsv"
        retrieval.write_vector_file(chunk_vecs, chunk_vec_path, provider.tag, dim)
        retrieval.write_vector_file(query_vecs, query_vec_path, provider.tag, dim)
        runner.finish(inputs, [chunk_vec_path, query_vec_path])
    click.echo(f"embed: {len(chunk_vecs)} chunk vectors, {len(query_vecs)} query vectors ({provider.tag})")


@main.command()
@click.option("--k", type=int, default=None, help="Retrieval depth per query.")
@click.option("--tag", default=None, help="Run tag (defaults to the provider tag).")
@pass_cfg
@_guard
def retrieve(cfg: PipelineConfig, k, tag):
    """Rank pages per query by exact top-k cosine within each document."""
    chunk_vec_path = _require(
        cfg.paths.output_dir / "vectors_chunks.tsv", "vectors_chunks.tsv", "embed"
    )
    query_vec_path = _require(
        cfg.paths.output_dir / "vectors_queries.tsv", "vectors_queries.tsv", "embed"
    )
    queries_path = _require(
        cfg.paths.output_dir / "queries.jsonl", "queries.jsonl", "build-triplets"
    )
    k = cfg.retrieve_k if k is None else k
    runner = StageRunner("retrieve", cfg, {"k": k, "tag": tag or ""})
    inputs = [chunk_vec_path, query_vec_path, queries_path]
    if runner.up_to_date(inputs):
        click.echo("retrieve: up to date")
        return
    with runner.lock():
        provider_tag, dim, chunk_vecs = retrieval.read_vector_file(chunk_vec_path)
        _, _, query_vecs = retrieval.read_vector_file(query_vec_path)
        store = retrieval.VectorStore(provider_tag=provider_tag, dim=dim)
        store.add_chunk_vectors(chunk_vecs)
        queries = triplets_mod.read_queries_jsonl(queries_path)
        by_id = {v.id: v for v in query_vecs}
        results = {}
        for query in queries:
            vec = by_id.get(query.query_id)
            if vec is None:
                runner.log.emit("retrieve", "query_without_vector", doc_id=query.doc_id,
                                query_id=query.query_id)
                continue
            try:
                partition = store.partition(query.doc_id)
            except EsgidxError:
                runner.log.emit("retrieve", "doc_without_vectors", doc_id=query.doc_id,
                                query_id=query.query_id)
                continue
            results[query.query_id] = retrieval.search_topk(vec, partition, k)
        run = evalrank.chunks_to_page_run(results, tag=tag or provider_tag.replace(" ", "_"))
        run_path = cfg.paths.output_dir / "run.txt"
        evalrank.write_run_file(run, run_path)
        runner.finish(inputs, [run_path])
    click.echo(f"retrieve: ranked {len(results)} queries at k={k} -> {run_path}")


@main.command("eval")
@click.option("--split", "split_name", default=None,
              type=click.Choice(["train", "dev", "test_gri", "test_esrs"]),
              help="Restrict evaluation to one split.")
@pass_cfg
@_guard
def eval_cmd(cfg: PipelineConfig, split_name):
    """Compute page-level ranking metrics for the retrieval run."""
    run_path = _require(cfg.paths.output_dir / "run.txt", "run.txt", "retrieve")
    qrels_path = _require(cfg.paths.output_dir / "qrels.txt", "qrels.txt", "build-triplets")
    inputs = [run_path, qrels_path]
    params = {"split": split_name or "all",
              "recall_k": cfg.eval.recall_k, "other_k": cfg.eval.other_k}
    if split_name:
        inputs.append(_require(cfg.paths.output_dir / "split.json", "split.json", "split"))
    runner = StageRunner("eval", cfg, params)
    if runner.up_to_date(inputs):
        click.echo("eval: up to date")
        return
    with runner.lock():
        run = evalrank.read_run_file(run_path)
        qrels = triplets_mod.read_qrels(qrels_path)
        if split_name:
            manifest = triplets_mod.read_split_manifest(cfg.paths.output_dir / "split.json")
            wanted = set(getattr(manifest, split_name))
            qrels = {qid: rel for qid, rel in qrels.items()
                     if qid.split("#", 1)[0] in wanted}
        report = evalrank.evaluate_run(
            run, qrels, recall_k=cfg.eval.recall_k, other_k=cfg.eval.other_k
        )
        suffix = f"_{split_name}" if split_name else ""
        report_path = cfg.paths.output_dir / f"eval_report{suffix}.json"
        report_path.write_text(evalrank.report_to_json(report, cfg.config_hash))
        runner.finish(inputs, [report_path])
    click.echo(evalrank.format_report_table(report))
    click.echo(f"eval: report -> {report_path}")


@main.command("index")
@click.option("--doc-id", required=True, help="Document to index.")
@click.option("--family", default=None,
              type=click.Choice([f.value for f in corpus_mod.StandardFamily]),
              help="Disclosure family for the query set (defaults to the doc's).")
@click.option("--k", type=int, default=10, show_default=True, help="Chunks retrieved per query.")
@click.option("--threshold", type=int, default=None, help="Judge score cutoff.")
@click.option("--provider", "provider_kind", type=click.Choice(["remote", "file", "test"]),
              default=None, help="Override the configured provider.")
@click.pass_context
@_guard
def index_cmd(ctx, doc_id, family, k, threshold, provider_kind):
    """Predict a document's content index and score it against gold."""
    cfg: PipelineConfig = ctx.obj
    strict = ctx.meta.get("strict", True)
    threshold = cfg.threshold if threshold is None else threshold
    docs = _load_docs_from_chunks(cfg)
    if doc_id not in docs:
        raise ConfigError(f"unknown doc_id {doc_id!r}")
    doc = docs[doc_id]
    catalog = _load_catalog(cfg)
    family_enum = corpus_mod.StandardFamily(family) if family else doc.meta.standard_family
    queries = sorted(catalog.for_family(family_enum), key=lambda r: r.disclosure_id)
    if not queries:
        raise ConfigError(f"catalog holds no {family_enum.value} disclosures")

    provider = _make_provider(cfg, provider_kind)
    judge_client = _make_judge_client(cfg)
    runner = StageRunner(f"index-{doc_id}", cfg,
                         {"k": k, "threshold": threshold, "family": family_enum.value,
                          "provider": provider.tag})
    with runner.lock():
        gen = indexer.generate_content_index(
            doc, queries, provider, judge_client, k=k, threshold=threshold
        )
        for warning in gen.warnings:
            runner.log.emit("index", "chunk_dropped", doc_id=doc_id, detail=warning)
        out_dir = cfg.paths.output_dir
        pred_path = out_dir / f"predicted_index_{_safe(doc_id)}.csv"
        evidence_path = out_dir / f"predicted_evidence_{_safe(doc_id)}.jsonl"
        standards.write_content_index_rows(
            indexer.predicted_index_rows(doc_id, gen.entries, queries), pred_path
        )
        indexer.write_evidence_jsonl(gen.entries, evidence_path)
        outputs = [pred_path, evidence_path]

        report = None
        if cfg.paths.indices is not None and cfg.paths.indices.exists():
            rows = [r for r in standards.read_content_index_rows(cfg.paths.indices)
                    if r["doc_id"] == doc_id]
            if rows:
                parse = standards.parse_content_index(rows, catalog, doc, strict=strict)
                report = indexer.score_index(gen.entries, parse.entries)
                prf_path = out_dir / f"prf_report_{_safe(doc_id)}.json"
                prf_path.write_text(indexer.prf_report_to_json(report, cfg.config_hash))
                outputs.append(prf_path)
        runner.finish([], outputs)
    predicted_pages = sum(len(e.pages) for e in gen.entries)
    click.echo(f"index: {len(gen.entries)} disclosures, {predicted_pages} predicted pages")
    if report is not None:
        click.echo(indexer.format_prf_table(report))


@main.command()
@click.option("--crosswalk", "crosswalk_path", type=click.Path(), default=None,
              help="Interoperability CSV (defaults to paths.crosswalk).")
@pass_cfg
@_guard
def overlap(cfg: PipelineConfig, crosswalk_path):
    """Report ESRS catalog statistics and GRI overlap."""
    path = Path(crosswalk_path) if crosswalk_path else cfg.paths.crosswalk
    path = _require(path, "paths.crosswalk", "(provide the interoperability export)")
    entries = standards.read_crosswalk(path)
    stats = standards.overlap_stats(entries)
    click.echo(standards.format_overlap_table(stats))
    out_path = cfg.paths.output_dir / "overlap.json"
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(vars(stats))
    payload["config_hash"] = cfg.config_hash
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    click.echo(f"overlap: stats -> {out_path}")


def _safe(doc_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in doc_id)


if __name__ == "__main__":
    main()
