"""Optional sentence-transformers adapter (install the ``st`` extra).

Wraps a hub model or local checkpoint so the trainer's encode/optimize loop
works unchanged; useful in environments with model access.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn


class SentenceTransformerEncoder(nn.Module):
    kind = "sentence-transformer"

    def __init__(self, model_name_or_path: str):
        super().__init__()
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover
            raise ImportError(
                "sentence-transformers is not installed; use the built-in 'hash' "
                "encoder or install the 'st' extra"
            ) from exc
        self.model_name = model_name_or_path
        self.model = SentenceTransformer(model_name_or_path)
        self.dim = self.model.get_sentence_embedding_dimension()

    def encode(self, texts: Sequence[str]) -> torch.Tensor:
        features = self.model.tokenize(list(texts))
        features = {k: v.to(self.model.device) for k, v in features.items()}
        return self.model(features)["sentence_embedding"]

    @torch.no_grad()
    def encode_frozen(self, texts: Sequence[str]) -> torch.Tensor:
        return self.model.encode(
            list(texts), convert_to_tensor=True, show_progress_bar=False
        ).cpu()

    def spec(self) -> dict:
        return {"kind": self.kind, "model": self.model_name, "dim": self.dim}
