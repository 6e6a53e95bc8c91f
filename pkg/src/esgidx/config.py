"""Declarative pipeline configuration loaded from one YAML file.

Secrets never live here: API keys come from the environment variables named
in the judge and provider sections.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .judge import JudgeConfig


@dataclass
class PathsConfig:
    corpus: Path | None = None
    reports: Path | None = None
    indices: Path | None = None
    crosswalk: Path | None = None
    catalog: Path | None = None
    output_dir: Path = Path("out")


@dataclass
class ChunkingConfig:
    size: int = 2048
    overlap: int = 512

    def __post_init__(self):
        if self.size <= self.overlap:
            raise ConfigError(f"chunking.size ({self.size}) must exceed overlap ({self.overlap})")


@dataclass
class SplitConfig:
    test_n: int = 10
    dev_n: int = 5
    cutoff: int = 2020


@dataclass
class ProviderConfig:
    kind: str = "test"  # test | remote | file
    model: str = "hash"
    endpoint_url: str = ""
    dim: int = 256
    seed: int = 0
    batch_size: int = 64
    vectors: Path | None = None  # file provider lookup table
    query_prefix: str = ""
    api_key_env: str = "EMBED_API_KEY"

    def __post_init__(self):
        if self.kind not in ("test", "remote", "file"):
            raise ConfigError(f"provider.kind must be test|remote|file, got {self.kind!r}")


@dataclass
class EvalConfig:
    recall_k: int = 10
    other_k: int = 50


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    judge: JudgeConfig | None = None
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 13
    threshold: int = 3
    retrieve_k: int = 50
    config_hash: str = ""


def _as_path(value, base: Path) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_config(path: Path | str, seed_override: int | None = None) -> PipelineConfig:
    """Parse the YAML config; relative paths resolve against the file's dir."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    base = path.parent

    if seed_override is not None:
        raw["seed"] = seed_override

    paths_raw = raw.get("paths", {})
    paths = PathsConfig(
        corpus=_as_path(paths_raw.get("corpus"), base),
        reports=_as_path(paths_raw.get("reports"), base),
        indices=_as_path(paths_raw.get("indices"), base),
        crosswalk=_as_path(paths_raw.get("crosswalk"), base),
        catalog=_as_path(paths_raw.get("catalog"), base),
        output_dir=_as_path(paths_raw.get("output_dir", "out"), base),
    )
    chunking = ChunkingConfig(**raw.get("chunking", {}))
    split = SplitConfig(**raw.get("split", {}))
    eval_cfg = EvalConfig(**raw.get("eval", {}))

    judge_raw = dict(raw.get("judge", {}))
    judge = None
    if judge_raw:
        cache = judge_raw.pop("cache", None)
        judge = JudgeConfig(
            endpoint_url=judge_raw.pop("endpoint_url"),
            model_name=judge_raw.pop("model_name"),
            cache_path=_as_path(cache, paths.output_dir or base) if cache else None,
            **judge_raw,
        )

    provider_raw = dict(raw.get("provider", {}))
    if "vectors" in provider_raw and provider_raw["vectors"]:
        provider_raw["vectors"] = _as_path(provider_raw["vectors"], base)
    provider = ProviderConfig(**provider_raw)

    cfg = PipelineConfig(
        paths=paths,
        chunking=chunking,
        split=split,
        judge=judge,
        provider=provider,
        eval=eval_cfg,
        seed=int(raw.get("seed", 13)),
        threshold=int(raw.get("threshold", 3)),
        retrieve_k=int(raw.get("retrieve_k", 50)),
    )
    cfg.config_hash = hash_config(raw)
    return cfg


def hash_config(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
