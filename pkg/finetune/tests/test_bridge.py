"""The trained encoder drives the retrieval pipeline through its declared
interfaces only: the triplet file in, vector files / the embeddings wire
contract out. The pipeline's own CLI does the consuming."""

import json

import yaml
from click.testing import CliRunner

from esgtune.encoders import HashedBagEncoder
from esgtune.export import EmbeddingServer, export_vectors

from esgidx.cli import main as esgidx_main


def build_pipeline_inputs(root):
    root.mkdir(parents=True, exist_ok=True)
    reports = ["doc_id,company,industry,year,standard_family,page_count"]
    pages = []
    index_rows = ["doc_id,standard_family,disclosure_id,title,pages_raw,note"]
    for d in range(2):
        doc_id = f"rep-{d}"
        reports.append(f"{doc_id},Co,auto,2022,GRI_NEW,4")
        for page in range(1, 5):
            pages.append(json.dumps({
                "doc_id": doc_id, "page": page,
                "text": f"emission scope table for {doc_id} page {page} " * 4,
            }))
        index_rows.append(f"{doc_id},GRI_NEW,GRI 305-1,Direct GHG emissions,1-2,")
    (root / "reports.csv").write_text("\n".join(reports) + "\n")
    (root / "pages.jsonl").write_text("\n".join(pages) + "\n")
    (root / "indices.csv").write_text("\n".join(index_rows) + "\n")


def write_config(root, provider: dict):
    config = {
        "paths": {
            "corpus": "pages.jsonl",
            "reports": "reports.csv",
            "indices": "indices.csv",
            "output_dir": "out",
        },
        "chunking": {"size": 256, "overlap": 64},
        "provider": provider,
        "seed": 3,
        "retrieve_k": 10,
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


def run_pipeline(config_path, *stages):
    runner = CliRunner()
    for stage in stages:
        result = runner.invoke(esgidx_main, ["--config", str(config_path), stage])
        assert result.exit_code == 0, f"{stage}: {result.output}\n{result.exception}"


def gather_pipeline_texts(out_dir):
    texts = []
    for line in (out_dir / "chunks.jsonl").read_text().splitlines():
        texts.append(json.loads(line)["text"])
    for line in (out_dir / "queries.jsonl").read_text().splitlines():
        texts.append(json.loads(line)["query_text"])
    return texts


class TestFileProviderBridge:
    def test_exported_vectors_drive_the_pipeline(self, tmp_path):
        build_pipeline_inputs(tmp_path)
        config_path = write_config(tmp_path, {"kind": "test", "dim": 16})
        run_pipeline(config_path, "ingest", "build-triplets")

        encoder = HashedBagEncoder(dim=24, seed=11)
        vec_path = tmp_path / "tuned_vectors.tsv"
        export_vectors(encoder, gather_pipeline_texts(tmp_path / "out"), vec_path,
                       provider_tag="tuned-encoder")

        config_path = write_config(
            tmp_path, {"kind": "file", "vectors": str(vec_path)}
        )
        run_pipeline(config_path, "ingest", "build-triplets", "embed", "retrieve", "eval")
        report = json.loads((tmp_path / "out" / "eval_report.json").read_text())
        assert report["n_queries"] == 2
        header = json.loads((tmp_path / "out" / "vectors_chunks.tsv").read_text().splitlines()[0])
        assert header["provider_tag"] == "tuned-encoder"


class TestRemoteWireBridge:
    def test_served_encoder_drives_the_pipeline(self, tmp_path):
        build_pipeline_inputs(tmp_path)
        encoder = HashedBagEncoder(dim=24, seed=11)
        with EmbeddingServer(encoder, model_tag="tuned-encoder") as server:
            config_path = write_config(
                tmp_path,
                {"kind": "remote", "model": "tuned-encoder",
                 "endpoint_url": server.url, "batch_size": 16},
            )
            run_pipeline(config_path, "ingest", "build-triplets", "embed", "retrieve", "eval")
            assert server.requests_served > 0
        report = json.loads((tmp_path / "out" / "eval_report.json").read_text())
        assert set(report["means"]) == {"recall@10", "mrr@50", "map@50", "ndcg@50"}
