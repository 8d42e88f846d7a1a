"""Query intent routing: keyword gate -> prototype match -> LLM classifier.

Only the temporal and causal labels change edge costs downstream; multi-hop
suppresses entity-centric, and general is the no-confident-intent default.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .jsonutil import first_json
from .llm import ChatClient, ChatClientError
from .prompts import load_prompt, render
from .vectors import Embedder, embed_many, row_dots

logger = logging.getLogger(__name__)

# absorbs float representation error at the threshold/margin boundaries
BOUNDARY_EPS = 1e-9


class IntentLabel(str, Enum):
    TEMPORAL = "temporal"
    CAUSAL = "causal"
    MULTI_HOP = "multi_hop"
    ENTITY_CENTRIC = "entity_centric"
    GENERAL = "general"


GENERAL_ONLY = frozenset({IntentLabel.GENERAL})
SCORED_LABELS = (
    IntentLabel.TEMPORAL,
    IntentLabel.CAUSAL,
    IntentLabel.MULTI_HOP,
    IntentLabel.ENTITY_CENTRIC,
)


def resolve_labels(labels) -> frozenset:
    """Apply multi-hop suppression; empty sets become ``{general}``."""
    out = {IntentLabel(lab) for lab in labels} - {IntentLabel.GENERAL}
    if IntentLabel.MULTI_HOP in out:
        out.discard(IntentLabel.ENTITY_CENTRIC)
    return frozenset(out) if out else GENERAL_ONLY


class KeywordBank:
    """Per-label regex triggers matched case-insensitively on word boundaries."""

    def __init__(self, patterns: Mapping[str, Sequence[str]]):
        self.patterns = {IntentLabel(k): list(v) for k, v in patterns.items()}
        self._compiled = {
            label: [
                re.compile(r"\b" + re.sub(r"\s+", r"\\s+", p.strip()) + r"\b", re.IGNORECASE)
                for p in pats
            ]
            for label, pats in self.patterns.items()
        }

    def counts(self) -> dict[IntentLabel, int]:
        return {label: len(p) for label, p in self.patterns.items()}

    def matches(self, query: str) -> frozenset:
        return frozenset(
            label
            for label, regexes in self._compiled.items()
            if any(r.search(query) for r in regexes)
        )


class PrototypeBank:
    def __init__(self, labels: Sequence[IntentLabel], texts: Sequence[str], vectors: np.ndarray):
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if not len(labels):
            vectors = vectors.reshape(0, vectors.shape[-1])
        if len(labels) != len(texts) or len(labels) != len(vectors):
            raise ValueError("prototype labels, texts and vectors must align")
        if len(vectors) and not np.allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-5):
            raise ValueError("prototype embeddings must be unit norm")
        self.labels = [IntentLabel(lab) for lab in labels]
        self.texts = list(texts)
        self.vectors = vectors

    @classmethod
    def from_entries(cls, entries: Sequence[Mapping[str, str]], embedder: Embedder) -> "PrototypeBank":
        texts = [e["text"] for e in entries]
        return cls([e["label"] for e in entries], texts, embed_many(embedder, texts))

    def __len__(self) -> int:
        return len(self.labels)

    def counts(self) -> dict[IntentLabel, int]:
        out: dict[IntentLabel, int] = {}
        for lab in self.labels:
            out[lab] = out.get(lab, 0) + 1
        return out


def _bank_doc(path: Optional[Union[str, Path]]) -> dict:
    if path is None:
        text = resources.files("typedmem").joinpath("data/banks.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return json.loads(text)


def load_banks(
    embedder: Embedder, path: Optional[Union[str, Path]] = None
) -> tuple[KeywordBank, PrototypeBank]:
    doc = _bank_doc(path)
    return KeywordBank(doc["keywords"]), PrototypeBank.from_entries(doc["prototypes"], embedder)


@dataclass
class RoutingResult:
    labels: frozenset
    tier: str
    llm_calls: int = 0
    raw_scores: Optional[dict[str, float]] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "labels": sorted(lab.value for lab in self.labels),
            "tier": self.tier,
            "llm_calls": self.llm_calls,
            "raw_scores": self.raw_scores,
            "error": self.error,
        }


def keyword_gate(query: str, bank: KeywordBank) -> Optional[frozenset]:
    hits = bank.matches(query)
    return resolve_labels(hits) if hits else None


def prototype_match(
    query_embedding: np.ndarray,
    bank: PrototypeBank,
    threshold: float = 0.55,
    margin: float = 0.10,
) -> Optional[frozenset]:
    """Commit the top prototype's label if it clears both gates.

    The margin is measured against the best prototype of a *different* label,
    so near-duplicate prototypes of one label do not block each other.
    """
    if not len(bank):
        return None
    sims = row_dots(bank.vectors, query_embedding)
    top = int(np.argmax(sims))
    top_label = bank.labels[top]
    others = [s for s, lab in zip(sims, bank.labels) if lab is not top_label]
    runner_up = max(others) if others else -np.inf
    if sims[top] <= threshold + BOUNDARY_EPS:
        return None
    if sims[top] - runner_up <= margin + BOUNDARY_EPS:
        return None
    return resolve_labels({top_label})


def parse_intent_scores(reply: str) -> Optional[dict[str, float]]:
    doc = first_json(reply, dict)
    if doc is None:
        return None
    scores = {}
    for label in SCORED_LABELS:
        value = doc.get(label.value, 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        scores[label.value] = min(1.0, max(0.0, float(value)))
    return scores


def llm_classify(
    query: str,
    client: ChatClient,
    commit_threshold: float = 0.5,
    general_floor: float = 0.3,
) -> RoutingResult:
    try:
        reply = client.complete(
            render("intent_user", query=query), system=load_prompt("intent_system").strip()
        )
    except ChatClientError as exc:
        return RoutingResult(GENERAL_ONLY, "llm", 1, None, f"transport: {exc}")
    scores = parse_intent_scores(reply)
    if scores is None:
        return RoutingResult(GENERAL_ONLY, "llm", 1, None, "unparseable intent reply")
    if all(v < general_floor for v in scores.values()):
        return RoutingResult(GENERAL_ONLY, "llm", 1, scores)
    labels = {IntentLabel(k) for k, v in scores.items() if v >= commit_threshold}
    return RoutingResult(resolve_labels(labels), "llm", 1, scores)


@dataclass
class IntentRouter:
    mode: str = "llm"
    keywords: Optional[KeywordBank] = None
    prototypes: Optional[PrototypeBank] = None
    client: Optional[ChatClient] = None
    threshold: float = 0.55
    margin: float = 0.10
    commit_threshold: float = 0.5
    general_floor: float = 0.3
    calls: dict = field(default_factory=lambda: {"keyword": 0, "prototype": 0, "llm": 0})

    def route(self, query: str, query_embedding: Optional[np.ndarray] = None) -> RoutingResult:
        if self.mode == "off":
            return RoutingResult(GENERAL_ONLY, "none")
        if self.mode == "hybrid":
            if self.keywords is not None:
                self.calls["keyword"] += 1
                labels = keyword_gate(query, self.keywords)
                if labels is not None:
                    return RoutingResult(labels, "keyword_gated")
            if self.prototypes is not None and query_embedding is not None:
                self.calls["prototype"] += 1
                labels = prototype_match(query_embedding, self.prototypes, self.threshold, self.margin)
                if labels is not None:
                    return RoutingResult(labels, "prototype")
        elif self.mode != "llm":
            raise ValueError(f"unknown intent mode {self.mode!r}")
        if self.client is None:
            return RoutingResult(GENERAL_ONLY, "none", 0, None, "no LLM client configured")
        self.calls["llm"] += 1
        return llm_classify(query, self.client, self.commit_threshold, self.general_floor)


def route(
    query: str,
    mode: str = "llm",
    query_embedding: Optional[np.ndarray] = None,
    keywords: Optional[KeywordBank] = None,
    prototypes: Optional[PrototypeBank] = None,
    client: Optional[ChatClient] = None,
    threshold: float = 0.55,
    margin: float = 0.10,
) -> RoutingResult:
    router = IntentRouter(mode, keywords, prototypes, client, threshold, margin)
    return router.route(query, query_embedding)
