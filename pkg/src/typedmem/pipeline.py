"""End-to-end query answering: route, retrieve, compress, assemble context."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from .checkpoint import Checkpoint
from .compression import CompressionResult, candidates_from_bundle, compress
from .config import RunConfig
from .extraction import header_text
from .graph import parse_instant
from .jsonutil import first_json
from .llm import ChatClient, ChatClientError
from .prompts import render
from .retrieval import RetrievalResult, retrieve
from .routing import IntentRouter, KeywordBank, PrototypeBank, RoutingResult, load_banks
from .tokens import count_tokens
from .vectors import Embedder, HashEmbedder, embed_and_normalize

logger = logging.getLogger(__name__)

NO_EVIDENCE = "[no relevant memory found]"
MAX_RETRIEVAL_CALLS = 2


def make_router(
    config: RunConfig,
    embedder: Embedder,
    client: Optional[ChatClient],
    banks: Optional[tuple[KeywordBank, PrototypeBank]] = None,
) -> IntentRouter:
    keywords = prototypes = None
    if config.intent_mode == "hybrid":
        keywords, prototypes = banks or load_banks(embedder)
    return IntentRouter(
        mode=config.intent_mode,
        keywords=keywords,
        prototypes=prototypes,
        client=client,
        threshold=config.proto_threshold,
        margin=config.proto_margin,
        commit_threshold=config.llm_commit_threshold,
        general_floor=config.llm_general_floor,
    )


@dataclass
class QueryTrace:
    question: str
    routing: RoutingResult
    retrieval: RetrievalResult
    compression: CompressionResult
    context_episodes: list[str]
    context: str
    context_tokens: int
    tokenizer: str
    llm_call_count: int
    degraded: dict = field(default_factory=dict)
    budget_exceeded: bool = False

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "routing": self.routing.to_dict(),
            "retrieval": self.retrieval.trace(),
            "compression": self.compression.to_dict(),
            "context_episodes": list(self.context_episodes),
            "context": self.context,
            "context_tokens": self.context_tokens,
            "tokenizer": self.tokenizer,
            "llm_call_count": self.llm_call_count,
            "degraded": dict(self.degraded),
            "budget_exceeded": self.budget_exceeded,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def context_block(ckpt: Checkpoint, episode_id: str, mode: str = "summary") -> str:
    node = ckpt.graph.nodes[episode_id]
    if mode == "raw":
        for record in ckpt.chunks.values():
            if record.get("episode_id") == episode_id:
                return record["text"].rstrip("\n") + "\n"
    return f"[{header_text(parse_instant(node.timestamp))}] {node.text}\n"


def build_context(
    ckpt: Checkpoint, episode_ids: list[str], config: RunConfig
) -> tuple[str, list[str], bool]:
    """Concatenate episode blocks; returns ``(text, kept_ids, over_budget)``."""
    if not episode_ids:
        return NO_EVIDENCE, [], False
    blocks = [context_block(ckpt, ep, config.context_mode) for ep in episode_ids]
    kept = list(episode_ids)
    text = "".join(blocks)
    budget = config.context_budget
    over = budget is not None and count_tokens(text, config.tokenizer) > budget
    if over:
        logger.warning("context exceeds budget of %d tokens", budget)
        if config.truncate_to_budget:
            while len(blocks) > 1 and count_tokens("".join(blocks), config.tokenizer) > budget:
                blocks.pop()
                kept.pop()
            text = "".join(blocks)
    return text, kept, over


def answer_query(
    ckpt: Checkpoint,
    question: str,
    config: Optional[RunConfig] = None,
    client: Optional[ChatClient] = None,
    embedder: Optional[Embedder] = None,
    router: Optional[IntentRouter] = None,
) -> QueryTrace:
    """Route -> retrieve -> compress -> context.  Never raises on backend trouble."""
    config = config or RunConfig()
    embedder = embedder or HashEmbedder(config.embedding_dim)
    router = router or make_router(config, embedder, client)
    q = embed_and_normalize(embedder, question)
    routing = router.route(question, q)
    result = retrieve(ckpt.graph, ckpt.stores, q, routing.labels, config)
    candidates = candidates_from_bundle(result.bundle, ckpt.graph)
    if config.enable_rerank:
        comp = compress(question, candidates, client, config.rerank_size, config.snippet_chars)
    else:
        comp = CompressionResult([c.episode_id for c in candidates], skipped=True)
    context, kept, over = build_context(ckpt, comp.selected, config)
    calls = routing.llm_calls + comp.llm_calls
    if calls > MAX_RETRIEVAL_CALLS:
        raise RuntimeError(f"retrieval used {calls} LLM calls")
    return QueryTrace(
        question=question,
        routing=routing,
        retrieval=result,
        compression=comp,
        context_episodes=kept,
        context=context,
        context_tokens=count_tokens(context, config.tokenizer),
        tokenizer=config.tokenizer,
        llm_call_count=calls,
        degraded={"routing": routing.error is not None, "compression": comp.degraded},
        budget_exceeded=over,
    )


# --------------------------------------------------------------------------
# answer and judge (protocol calls, counted apart from retrieval)


def generate_answer(question: str, context: str, client: ChatClient) -> str:
    return client.complete(render("answer", context=context, question=question)).strip()


@dataclass
class Judgement:
    label: Optional[str]
    reasoning: str = ""
    degraded: bool = False
    error: Optional[str] = None

    @property
    def judged(self) -> bool:
        return self.label is not None

    @property
    def correct(self) -> bool:
        return self.label == "CORRECT"


def parse_judgement(reply: str) -> Judgement:
    doc = first_json(reply or "", dict)
    if doc is None:
        return Judgement("WRONG", degraded=True, error="unparseable judge reply")
    label = doc.get("label")
    label = label.strip().upper() if isinstance(label, str) else None
    reasoning = doc.get("reasoning") if isinstance(doc.get("reasoning"), str) else ""
    if label not in ("CORRECT", "WRONG"):
        return Judgement("WRONG", reasoning, True, "judge reply has no valid label")
    return Judgement(label, reasoning)


def judge_answer(question: str, gold: str, generated: str, client: ChatClient) -> Judgement:
    prompt = render("judge", question=question, gold_answer=gold, generated_answer=generated)
    try:
        reply = client.complete(prompt)
    except ChatClientError as exc:
        return Judgement(None, degraded=True, error=f"transport: {exc}")
    return parse_judgement(reply)
