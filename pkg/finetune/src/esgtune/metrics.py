"""Triplet-ranking evaluation for checkpoint selection."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .data import TripletBatchView


def cosine_accuracy(encoder, triplets: TripletBatchView, batch_size: int = 32) -> float:
    """Fraction of triplets whose anchor sits closer to its positive than to
    its negative by cosine similarity."""
    if len(triplets) == 0:
        raise ValueError("cosine accuracy needs at least one triplet")
    correct = 0
    with torch.no_grad():
        for start in range(0, len(triplets), batch_size):
            sl = slice(start, start + batch_size)
            anchors = encoder.encode_frozen(triplets.anchors[sl])
            positives = encoder.encode_frozen(triplets.positives[sl])
            negatives = encoder.encode_frozen(triplets.negatives[sl])
            sim_pos = F.cosine_similarity(anchors, positives, dim=1)
            sim_neg = F.cosine_similarity(anchors, negatives, dim=1)
            correct += int((sim_pos > sim_neg).sum())
    return correct / len(triplets)
