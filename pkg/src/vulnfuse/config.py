"""Pipeline configuration: JSON schema, defaults, and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bm25 import DEFAULT_B, DEFAULT_K1, DEFAULT_KEYWORDS, DEFAULT_TOP_K, DEFAULT_VOTE_THRESHOLD
from .dense import DEFAULT_CHI, DEFAULT_EMBED_DIM, DEFAULT_MIN_LEN, DEFAULT_OVERLAP, DEFAULT_WINDOW
from .errors import ConfigError
from .meta import DEFAULT_HIDDEN1, DEFAULT_HIDDEN2, DEFAULT_LAMBDA, DEFAULT_THRESHOLD

DEFAULT_DETECTORS = ({"kind": "dense"}, {"kind": "bm25"}, {"kind": "slora"})


@dataclass
class Bm25Config:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    top_k: int = DEFAULT_TOP_K
    vote_threshold: int = DEFAULT_VOTE_THRESHOLD
    keywords: tuple = DEFAULT_KEYWORDS


@dataclass
class DenseConfig:
    window: int = DEFAULT_WINDOW
    overlap: int = DEFAULT_OVERLAP
    min_len: int = DEFAULT_MIN_LEN
    chi: int = DEFAULT_CHI
    embed_dim: int = DEFAULT_EMBED_DIM


@dataclass
class SloraConfig:
    feature_dim: int = 64
    rank: int = 8
    alpha: float = 0.9
    learning_rate: float = 5e-5
    batch_size: int = 8
    epochs: int = 5
    patience: Optional[int] = None


@dataclass
class MetaConfig:
    hidden1: int = DEFAULT_HIDDEN1
    hidden2: int = DEFAULT_HIDDEN2
    lam: float = DEFAULT_LAMBDA
    threshold: float = DEFAULT_THRESHOLD
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 300


@dataclass
class ExternalConfig:
    endpoint: Optional[str] = None
    timeout: float = 30.0
    auth_header: Optional[str] = None
    report_endpoint: Optional[str] = None


@dataclass
class PipelineConfig:
    taxonomy_path: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    knowledge_path: Optional[str] = None
    prompt_template_path: Optional[str] = None
    seed: int = 0
    bm25: Bm25Config = field(default_factory=Bm25Config)
    dense: DenseConfig = field(default_factory=DenseConfig)
    slora: SloraConfig = field(default_factory=SloraConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    external: ExternalConfig = field(default_factory=ExternalConfig)
    detectors: tuple = DEFAULT_DETECTORS


_SECTION_FIELDS = {
    "bm25": {"k1", "b", "top_k", "vote_threshold", "keywords"},
    "dense": {"window", "overlap", "min_len", "chi", "embed_dim"},
    "slora": {"feature_dim", "rank", "alpha", "learning_rate", "batch_size",
              "epochs", "patience"},
    "meta": {"hidden1", "hidden2", "lam", "threshold", "learning_rate",
             "batch_size", "epochs"},
    "external": {"endpoint", "timeout", "auth_header", "report_endpoint"},
}

_TOP_KEYS = {"taxonomy", "datasets", "knowledge", "prompt_template", "seed",
             "detectors"} | set(_SECTION_FIELDS)

_DETECTOR_KINDS = {"slora", "bm25", "dense", "external", "mock"}


def load_config(path) -> PipelineConfig:
    """Parse and validate a JSON config; unknown or ill-typed keys are fatal."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    bad = sorted(set(raw) - _TOP_KEYS)
    if bad:
        raise ConfigError(f"unknown config keys: {bad}", keys=bad)

    config = PipelineConfig()
    config.taxonomy_path = raw.get("taxonomy")
    datasets = raw.get("datasets", {})
    if not isinstance(datasets, dict):
        raise ConfigError("'datasets' must be an object", keys=["datasets"])
    config.train_path = datasets.get("train")
    config.test_path = datasets.get("test")
    config.knowledge_path = raw.get("knowledge")
    config.prompt_template_path = raw.get("prompt_template")
    config.seed = int(raw.get("seed", 0))

    offending = []
    for section, fields in _SECTION_FIELDS.items():
        block = raw.get(section, {})
        if not isinstance(block, dict):
            offending.append(section)
            continue
        target = getattr(config, section)
        for key, value in block.items():
            if key not in fields:
                offending.append(f"{section}.{key}")
                continue
            if key == "keywords":
                value = tuple(value)
            setattr(target, key, value)
    if offending:
        raise ConfigError(f"invalid config keys: {sorted(offending)}", keys=offending)

    if "detectors" in raw:
        detectors = raw["detectors"]
        if not isinstance(detectors, list) or not detectors:
            raise ConfigError("'detectors' must be a non-empty list", keys=["detectors"])
        for spec in detectors:
            kind = spec.get("kind") if isinstance(spec, dict) else None
            if kind not in _DETECTOR_KINDS:
                raise ConfigError(f"unknown detector kind {kind!r}", keys=["detectors"])
        config.detectors = tuple(detectors)
    return config


def write_default_config(path, corpus_dir="corpus", workdir="work") -> None:
    """Starter config pointing at a synthesized corpus layout."""
    payload = {
        "seed": 7,
        "taxonomy": f"{corpus_dir}/taxonomy.json",
        "datasets": {"train": f"{corpus_dir}/train.jsonl", "test": f"{corpus_dir}/test.jsonl"},
        "bm25": {"k1": DEFAULT_K1, "b": DEFAULT_B, "top_k": DEFAULT_TOP_K,
                 "vote_threshold": DEFAULT_VOTE_THRESHOLD},
        "dense": {"window": DEFAULT_WINDOW, "overlap": DEFAULT_OVERLAP,
                  "min_len": DEFAULT_MIN_LEN, "chi": DEFAULT_CHI},
        "slora": {"feature_dim": 64, "rank": 8, "alpha": 0.9,
                  "learning_rate": 5e-5, "batch_size": 8, "epochs": 5},
        "meta": {"hidden1": DEFAULT_HIDDEN1, "hidden2": DEFAULT_HIDDEN2,
                 "threshold": DEFAULT_THRESHOLD},
        "detectors": [{"kind": "dense"}, {"kind": "bm25"}, {"kind": "slora"}],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
