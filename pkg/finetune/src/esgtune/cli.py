"""Subcommands: train, eval-accuracy, export, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .data import TripletBatchView, read_triplet_file
from .encoders import build_encoder, load_encoder
from .export import EmbeddingServer, export_vectors
from .metrics import cosine_accuracy
from .train import TrainConfig, train_from_file


@click.group()
def main():
    """Fine-tune text encoders on retrieval triplet files."""


@main.command("train")
@click.option("--triplets", "triplet_file", required=True, type=click.Path(exists=True))
@click.option("--output", "output_dir", required=True, type=click.Path())
@click.option("--split-manifest", type=click.Path(exists=True), default=None,
              help="Pipeline split manifest; restricts training to its train docs.")
@click.option("--encoder", "encoder_name", default="hash", show_default=True,
              help='"hash" or a sentence-transformers model id/path.')
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--buckets", type=int, default=4096, show_default=True)
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--learning-rate", type=float, default=5e-5, show_default=True)
@click.option("--eval-steps", type=int, default=50, show_default=True)
@click.option("--holdout-docs", type=int, default=5, show_default=True,
              help="Documents carved from train for checkpoint selection.")
@click.option("--seed", type=int, default=42, show_default=True)
def train_cmd(triplet_file, output_dir, split_manifest, encoder_name, dim, buckets,
              epochs, batch_size, learning_rate, eval_steps, holdout_docs, seed):
    """Train on a triplet file and keep the best checkpoint."""
    config = TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        eval_steps=eval_steps,
        save_steps=eval_steps,
        seed=seed,
        output_dir=output_dir,
    )
    train_docs = None
    if split_manifest:
        manifest = json.loads(Path(split_manifest).read_text())
        train_docs = manifest["train"]
    encoder = None
    if encoder_name != "hash":
        encoder = build_encoder(encoder_name, dim=dim, n_buckets=buckets, seed=seed)
    result = train_from_file(
        config, triplet_file, encoder=encoder, train_docs=train_docs,
        holdout_docs=holdout_docs, dim=dim, n_buckets=buckets,
    )
    click.echo(
        f"train: best step {result.best_step} "
        f"(validation cosine accuracy {result.best_metric:.4f}) -> {result.output_dir}/best"
    )


@main.command("eval-accuracy")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--triplets", "triplet_file", required=True, type=click.Path(exists=True))
def eval_cmd(checkpoint, triplet_file):
    """Cosine accuracy of a checkpoint on a triplet file."""
    encoder = load_encoder(checkpoint)
    view = TripletBatchView.from_records(read_triplet_file(triplet_file))
    click.echo(f"cosine_accuracy: {cosine_accuracy(encoder, view):.4f}")


@main.command("export")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--texts", "texts_file", required=True, type=click.Path(exists=True),
              help="One text per line, or a triplet/chunks JSONL.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--tag", default=None, help="provider_tag for the vector file header.")
def export_cmd(checkpoint, texts_file, out_path, tag):
    """Export vectors in the pipeline's text-addressed file format."""
    encoder = load_encoder(checkpoint)
    texts = _read_texts(Path(texts_file))
    tag = tag or f"esgtune:{Path(checkpoint).name}"
    count = export_vectors(encoder, texts, out_path, provider_tag=tag)
    click.echo(f"export: {count} vectors ({tag}) -> {out_path}")


@main.command("serve")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--tag", default=None)
def serve_cmd(checkpoint, host, port, tag):  # pragma: no cover - long-running
    """Serve the checkpoint over the remote embeddings wire contract."""
    encoder = load_encoder(checkpoint)
    server = EmbeddingServer(encoder, model_tag=tag or f"esgtune:{Path(checkpoint).name}",
                             host=host, port=port)
    click.echo(f"serving embeddings at {server.url}")
    server.serve_forever()


def _read_texts(path: Path) -> list[str]:
    texts: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            record = json.loads(line)
            if "text" in record:
                texts.append(record["text"])
                continue
            for key in ("query_text",):
                if key in record:
                    texts.append(record[key])
            for key in ("positive", "negative"):
                if key in record and "text" in record[key]:
                    texts.append(record[key]["text"])
        else:
            texts.append(line)
    return texts


if __name__ == "__main__":
    main()
