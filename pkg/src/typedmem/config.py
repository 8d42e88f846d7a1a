"""Run and ingestion configuration with the published defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from .graph import EdgeKind

INTENT_MODES = ("llm", "hybrid", "off")


def default_fallback_costs() -> dict[str, float]:
    return {
        EdgeKind.BELONGS_TO.value: 0.02,
        EdgeKind.SEMANTIC.value: 0.90,
        EdgeKind.TEMPORAL.value: 0.90,
        EdgeKind.CAUSAL.value: 0.90,
        EdgeKind.EVOLUTION.value: 0.90,
        EdgeKind.INVOLVES_ENTITY.value: 0.90,
    }


@dataclass(frozen=True)
class IngestConfig:
    entity_merge_threshold: float = 0.90
    facet_merge_threshold: float = 0.85
    causal_interval: int = 5
    causal_window: int = 5
    causal_confidence_floor: float = 0.7
    temporal_window: int = 5
    # Temporal edge between chain-consecutive Episodes
    link_episode_chain: bool = True
    enable_semantic_edges: bool = False
    semantic_threshold: float = 0.85


@dataclass(frozen=True)
class RunConfig:
    # ablation flags
    enable_bridges: bool = True
    enable_edge_costs: bool = True
    enable_rerank: bool = True
    intent_mode: str = "llm"
    # retrieval
    anchor_k: int = 30
    hop_penalty: float = 0.05
    bundle_size: int = 10
    fallback_costs: dict[str, float] = field(default_factory=default_fallback_costs)
    discount_matched: float = 0.5
    discount_evolution_temporal: float = 0.7
    # compression
    rerank_size: int = 5
    snippet_chars: int = 400
    # routing
    proto_threshold: float = 0.55
    proto_margin: float = 0.10
    llm_commit_threshold: float = 0.5
    llm_general_floor: float = 0.3
    # context
    context_mode: str = "summary"
    context_budget: Optional[int] = None
    truncate_to_budget: bool = False
    tokenizer: str = "regex"
    # evaluation
    seed: int = 42
    bootstrap_resamples: int = 2000
    embedding_dim: int = 384
    ingest: IngestConfig = field(default_factory=IngestConfig)

    def __post_init__(self) -> None:
        if self.intent_mode not in INTENT_MODES:
            raise ValueError(f"intent_mode must be one of {INTENT_MODES}")
        if self.context_mode not in ("summary", "raw"):
            raise ValueError("context_mode must be 'summary' or 'raw'")
        if self.bundle_size < 1 or self.rerank_size < 1 or self.anchor_k < 1:
            raise ValueError("bundle_size, rerank_size and anchor_k must be positive")

    def with_flags(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "ingest" in data and isinstance(data["ingest"], dict):
            data["ingest"] = IngestConfig(**data["ingest"])
        if "fallback_costs" in data:
            data["fallback_costs"] = {**default_fallback_costs(), **data["fallback_costs"]}
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))
