"""Trainable text encoders behind one small interface.

The built-in encoder hashes tokens into embedding buckets and mean-pools,
which trains offline in seconds. Hub-hosted sentence-transformer models plug
in through the optional adapter when that library and a model are available.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def token_bucket(token: str, n_buckets: int) -> int:
    # Stable across processes; Python's hash() is salted.
    return int.from_bytes(hashlib.sha1(token.encode("utf-8")).digest()[:4], "big") % n_buckets


class HashedBagEncoder(nn.Module):
    """Mean-pooled bag of hashed token embeddings."""

    kind = "hashed-bag"

    def __init__(self, dim: int = 64, n_buckets: int = 4096, seed: int = 42):
        super().__init__()
        self.dim = dim
        self.n_buckets = n_buckets
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        weight = torch.randn((n_buckets, dim), generator=generator) * 0.1
        self.embedding = nn.EmbeddingBag(n_buckets, dim, mode="mean", _weight=weight)
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        bucket = self._bucket_cache.get(token)
        if bucket is None:
            bucket = token_bucket(token, self.n_buckets)
            self._bucket_cache[token] = bucket
        return bucket

    def encode(self, texts: Sequence[str]) -> torch.Tensor:
        """Embed texts as (n, dim); rows for token-free texts are zero."""
        flat: list[int] = []
        offsets: list[int] = []
        for text in texts:
            offsets.append(len(flat))
            flat.extend(self._bucket(t) for t in tokenize(text))
        if not flat:
            return torch.zeros((len(texts), self.dim))
        indices = torch.tensor(flat, dtype=torch.long)
        offset_t = torch.tensor(offsets, dtype=torch.long)
        return self.embedding(indices, offset_t)

    @torch.no_grad()
    def encode_frozen(self, texts: Sequence[str]) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self.encode(texts).detach()
        finally:
            self.train(was_training)

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "n_buckets": self.n_buckets,
                "seed": self.seed}


def save_encoder(encoder: HashedBagEncoder, directory: Path | str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "encoder.json").write_text(json.dumps(encoder.spec(), sort_keys=True))
    torch.save(encoder.state_dict(), directory / "weights.pt")
    return directory


def load_encoder(directory: Path | str) -> HashedBagEncoder:
    directory = Path(directory)
    spec = json.loads((directory / "encoder.json").read_text())
    if spec.get("kind") != HashedBagEncoder.kind:
        raise ValueError(f"unsupported encoder kind {spec.get('kind')!r}")
    encoder = HashedBagEncoder(dim=spec["dim"], n_buckets=spec["n_buckets"], seed=spec["seed"])
    encoder.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
    encoder.eval()
    return encoder


def build_encoder(name: str, dim: int = 64, n_buckets: int = 4096, seed: int = 42):
    """Encoder from a config string: "hash" or a sentence-transformers id/path."""
    if name in ("hash", HashedBagEncoder.kind):
        return HashedBagEncoder(dim=dim, n_buckets=n_buckets, seed=seed)
    from .st_adapter import SentenceTransformerEncoder  # optional dependency

    return SentenceTransformerEncoder(name)
