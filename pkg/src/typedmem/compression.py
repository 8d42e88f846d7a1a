"""Score-then-select reranking of a retrieval bundle down to M episodes.

One chat call scores every candidate summary 0-10; selection is then a
deterministic sort on (rerank score desc, bundle score asc, index asc).  The
prompt is content-only: path costs and scores never reach the model.
"""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .graph import MemoryGraph
from .jsonutil import first_json
from .llm import ChatClient, ChatClientError
from .prompts import render
from .retrieval import Bundle

logger = logging.getLogger(__name__)

MISSING_SCORE = -1.0


@dataclass(frozen=True)
class Candidate:
    episode_id: str
    summary: str
    bundle_score: float


def candidates_from_bundle(bundle: Bundle, graph: MemoryGraph) -> list[Candidate]:
    return [Candidate(e.episode_id, graph.nodes[e.episode_id].text, e.score) for e in bundle]


def snippet(summary: str, limit: int = 400) -> str:
    """NFC-normalised summary cut to ``limit`` characters, kept on one line."""
    text = unicodedata.normalize("NFC", summary)[:limit]
    return text.replace("\r", " ").replace("\n", " ")


def render_rerank_prompt(question: str, candidates: Sequence[Candidate], limit: int = 400) -> str:
    lines = [f"[{i}] {snippet(c.summary, limit)}" for i, c in enumerate(candidates)]
    return render("rerank", question=question, snippets="\n".join(lines))


def parse_scores(reply: str, n_candidates: int) -> Optional[dict[int, float]]:
    """Map index -> score in [0, 10]; unscored indices get -1.  ``None`` if no array parses."""
    items = first_json(reply or "", list)
    if items is None:
        return None
    scores: dict[int, float] = {}
    for item in items:
        if not isinstance(item, dict):
            continue
        index, score = item.get("index"), item.get("score")
        if isinstance(index, bool) or not isinstance(index, int):
            continue
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            continue
        if 0 <= index < n_candidates and index not in scores:
            scores[index] = min(10.0, max(0.0, float(score)))
    return {i: scores.get(i, MISSING_SCORE) for i in range(n_candidates)}


@dataclass
class CompressionResult:
    selected: list[str]
    scores: dict[int, float] = field(default_factory=dict)
    skipped: bool = False
    llm_calls: int = 0
    degraded: bool = False
    error: Optional[str] = None
    # selected order: "rerank" (score desc) or "bundle"
    order: str = "bundle"

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "skipped": self.skipped,
            "llm_calls": self.llm_calls,
            "degraded": self.degraded,
            "error": self.error,
            "order": self.order,
        }


def select_top(candidates: Sequence[Candidate], scores: dict[int, float], m: int) -> list[int]:
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-scores.get(i, MISSING_SCORE), candidates[i].bundle_score, i),
    )
    return order[:m]


def compress(
    question: str,
    candidates: Sequence[Candidate],
    client: Optional[ChatClient],
    m: int = 5,
    snippet_chars: int = 400,
) -> CompressionResult:
    if m < 1:
        raise ValueError("m must be positive")
    ids = [c.episode_id for c in candidates]
    if len(candidates) <= m:
        return CompressionResult(ids, skipped=True)
    fallback = ids[:m]
    if client is None:
        return CompressionResult(fallback, degraded=True, error="no chat client configured")
    prompt = render_rerank_prompt(question, candidates, snippet_chars)
    try:
        reply = client.complete(prompt)
    except ChatClientError as exc:
        logger.warning("rerank call failed: %s", exc)
        return CompressionResult(fallback, llm_calls=1, degraded=True, error=f"transport: {exc}")
    scores = parse_scores(reply, len(candidates))
    if scores is None:
        return CompressionResult(fallback, llm_calls=1, degraded=True, error="unparseable rerank reply")
    picked = select_top(candidates, scores, m)
    return CompressionResult([ids[i] for i in picked], scores, llm_calls=1, order="rerank")
