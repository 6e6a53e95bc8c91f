"""Contrastive training loop with in-batch negatives and checkpoint selection.

Each batch scores every anchor against all positives and all explicit
negatives in the batch; the anchor's own positive is the target class. The
checkpoint with the best validation cosine accuracy (ties go to the latest
step) is reloaded at the end of training.
"""

from __future__ import annotations

import json
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from .data import NoDuplicatesBatchSampler, TripletBatchView, carve_validation, filter_by_docs, read_triplet_file
from .encoders import HashedBagEncoder, save_encoder
from .metrics import cosine_accuracy


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 5e-5
    warmup_ratio: float = 0.05
    weight_decay: float = 0.01
    batch_size: int = 32  # drop to 8 for large encoders
    eval_batch_size: int = 32
    eval_steps: int = 50
    save_steps: int = 50
    save_total_limit: int = 5
    logging_steps: int = 20
    no_duplicates: bool = True
    selection_metric: str = "cosine_accuracy"
    scale: float = 20.0  # similarity logit multiplier
    seed: int = 42
    max_steps: int | None = None
    output_dir: Path | str = "runs/default"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("learning_rate", "warmup_ratio", "weight_decay", "batch_size",
                     "eval_batch_size", "eval_steps", "save_steps", "save_total_limit",
                     "logging_steps", "scale"):
            if getattr(self, name) < 0 or (name not in ("warmup_ratio", "weight_decay")
                                           and not getattr(self, name)):
                raise ValueError(f"{name} must be positive")
        if self.selection_metric != "cosine_accuracy":
            raise ValueError("cosine_accuracy is the only supported selection metric")


def multiple_negatives_ranking_loss(
    anchors: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    scale: float = 20.0,
) -> torch.Tensor:
    """Cross entropy over cosine scores of each anchor against every
    candidate in the batch (all positives plus all explicit negatives)."""
    candidates = torch.cat([positives, negatives], dim=0)
    a = F.normalize(anchors, dim=1, eps=1e-12)
    c = F.normalize(candidates, dim=1, eps=1e-12)
    scores = a @ c.T * scale
    labels = torch.arange(len(anchors), device=scores.device)
    return F.cross_entropy(scores, labels)


@dataclass
class Checkpoint:
    step: int
    metric: float
    path: Path


@dataclass
class TrainResult:
    encoder: nn.Module
    best_step: int
    best_metric: float
    history: list[dict] = field(default_factory=list)
    output_dir: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [h["loss"] for h in self.history if "loss" in h]

    @property
    def eval_metrics(self) -> list[tuple[int, float]]:
        return [(h["step"], h["cosine_accuracy"]) for h in self.history
                if "cosine_accuracy" in h]


class _PlainBatchSampler:
    def __init__(self, n: int, batch_size: int, seed: int):
        self.n, self.batch_size, self.seed = n, batch_size, seed

    def epoch_batches(self, epoch: int) -> Iterator[list[int]]:
        order = list(range(self.n))
        random.Random(f"{self.seed}:{epoch}").shuffle(order)
        for start in range(0, self.n, self.batch_size):
            yield order[start : start + self.batch_size]

    def steps_per_epoch(self) -> int:
        return (self.n + self.batch_size - 1) // self.batch_size


def train(
    config: TrainConfig,
    encoder: nn.Module,
    train_triplets: TripletBatchView,
    validation_triplets: TripletBatchView,
) -> TrainResult:
    """Optimize the encoder and return it loaded with the best checkpoint."""
    if len(train_triplets) == 0:
        raise ValueError("no training triplets")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    if config.no_duplicates:
        sampler = NoDuplicatesBatchSampler(
            train_triplets.anchors, config.batch_size, seed=config.seed
        )
    else:
        sampler = _PlainBatchSampler(len(train_triplets), config.batch_size, config.seed)
    total_steps = sampler.steps_per_epoch() * config.epochs
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    optimizer = torch.optim.AdamW(
        encoder.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    warmup = max(int(total_steps * config.warmup_ratio), 0)

    def lr_lambda(step: int) -> float:
        if total_steps == 0:
            return 0.0
        if step < warmup:
            return (step + 1) / max(warmup, 1)
        if total_steps == warmup:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)

    history: list[dict] = []
    checkpoints: list[Checkpoint] = []
    best: Checkpoint | None = None

    def evaluate(step: int) -> float:
        metric = cosine_accuracy(encoder, validation_triplets, config.eval_batch_size)
        history.append({"step": step, "cosine_accuracy": metric})
        return metric

    def save(step: int, metric: float) -> None:
        nonlocal best
        path = out_dir / f"checkpoint-{step}"
        save_encoder(encoder, path)
        (path / "trainer_state.json").write_text(
            json.dumps({"step": step, "cosine_accuracy": metric}, sort_keys=True)
        )
        checkpoint = Checkpoint(step=step, metric=metric, path=path)
        checkpoints.append(checkpoint)
        if best is None or metric > best.metric or (metric == best.metric
                                                    and step >= best.step):
            best = checkpoint
        while len(checkpoints) > config.save_total_limit:
            victim = next((c for c in checkpoints if c is not best), None)
            if victim is None:
                break
            checkpoints.remove(victim)
            shutil.rmtree(victim.path, ignore_errors=True)

    step = 0
    last_eval: float | None = None
    if total_steps == 0:
        last_eval = evaluate(0)
        save(0, last_eval)
    else:
        encoder.train()
        done = False
        for epoch in range(config.epochs):
            if done:
                break
            for batch in sampler.epoch_batches(epoch):
                anchors = encoder.encode([train_triplets.anchors[i] for i in batch])
                positives = encoder.encode([train_triplets.positives[i] for i in batch])
                negatives = encoder.encode([train_triplets.negatives[i] for i in batch])
                loss = multiple_negatives_ranking_loss(
                    anchors, positives, negatives, scale=config.scale
                )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                scheduler.step()
                step += 1
                if step % config.logging_steps == 0 or step == 1:
                    history.append({"step": step, "loss": float(loss.detach())})
                evaluated = False
                if step % config.eval_steps == 0 or step == total_steps:
                    last_eval = evaluate(step)
                    evaluated = True
                if step % config.save_steps == 0 or step == total_steps:
                    if not evaluated:
                        last_eval = evaluate(step)
                    save(step, last_eval)
                if step >= total_steps:
                    done = True
                    break

    assert best is not None
    # load_best_model_at_end
    state = torch.load(best.path / "weights.pt", weights_only=True)
    encoder.load_state_dict(state)
    encoder.eval()
    (out_dir / "best").mkdir(exist_ok=True)
    save_encoder(encoder, out_dir / "best")
    (out_dir / "best" / "trainer_state.json").write_text(
        json.dumps({"step": best.step, "cosine_accuracy": best.metric}, sort_keys=True)
    )
    return TrainResult(
        encoder=encoder,
        best_step=best.step,
        best_metric=best.metric,
        history=history,
        output_dir=out_dir,
    )


def train_from_file(
    config: TrainConfig,
    triplet_file: Path | str,
    encoder: nn.Module | None = None,
    train_docs: list[str] | None = None,
    holdout_docs: int = 5,
    dim: int = 64,
    n_buckets: int = 4096,
) -> TrainResult:
    """End-to-end: read the triplet file, carve validation documents from the
    training documents, train, and return the best checkpoint."""
    records = read_triplet_file(triplet_file)
    if train_docs is not None:
        records = filter_by_docs(records, train_docs)
    docs = sorted({r.doc_id for r in records})
    train_doc_ids, validation_doc_ids = carve_validation(docs, n=holdout_docs, seed=config.seed)
    train_records = filter_by_docs(records, train_doc_ids)
    validation_records = filter_by_docs(records, validation_doc_ids)
    if not validation_records:
        validation_records = train_records
    if encoder is None:
        encoder = HashedBagEncoder(dim=dim, n_buckets=n_buckets, seed=config.seed)
    return train(
        config,
        encoder,
        TripletBatchView.from_records(train_records),
        TripletBatchView.from_records(validation_records),
    )
