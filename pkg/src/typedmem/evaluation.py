"""Evaluation harness: per-question JSONL log, aggregate metrics, run comparison."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .checkpoint import Checkpoint
from .config import RunConfig
from .llm import ChatClient, ChatClientError
from .pipeline import answer_query, generate_answer, judge_answer, make_router
from .stats import discordant, mcnemar_mid_p, paired_bootstrap_ci
from .vectors import Embedder, HashEmbedder

logger = logging.getLogger(__name__)

CATEGORIES = ("single_hop", "multi_hop", "temporal", "open_domain")
ER_KS = (5, 10)


@dataclass(frozen=True)
class QueryRecord:
    question: str
    gold_answer: str
    category: str
    evidence: tuple[str, ...] = ()
    conversation_id: str = ""
    qid: str = ""

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], index: int = 0) -> "QueryRecord":
        category = data.get("category", "single_hop")
        if isinstance(category, int) and not isinstance(category, bool):
            if not 1 <= category <= len(CATEGORIES):
                raise ValueError(f"category {category} outside 1-{len(CATEGORIES)}")
            category = CATEGORIES[category - 1]
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        gold = data.get("gold_answer", data.get("answer", ""))
        return cls(
            question=str(data["question"]),
            gold_answer=str(gold),
            category=category,
            evidence=tuple(str(e) for e in data.get("evidence", ())),
            conversation_id=str(data.get("conversation_id", "")),
            qid=str(data.get("qid", data.get("id", f"q{index:05d}"))),
        )


def load_records(path: Union[str, Path]) -> list[QueryRecord]:
    items = json.loads(Path(path).read_text("utf-8"))
    return [QueryRecord.from_dict(item, i) for i, item in enumerate(items)]


# --------------------------------------------------------------------------
# evidence recall


def dia_index(ckpt: Checkpoint) -> dict[str, str]:
    """dia_id -> episode id, from the chunk records."""
    out = {}
    for record in ckpt.chunks.values():
        for dia in record.get("dia_ids", ()):
            out[dia] = record["episode_id"]
    return out


def gold_episodes(evidence: Iterable[str], index: Mapping[str, str]) -> set[str]:
    """Resolve evidence citations to episodes.

    A semicolon-joined compound citation counts once, via its first
    resolvable part.  Unresolvable citations are dropped with a warning.
    """
    gold = set()
    for citation in evidence:
        parts = [p.strip() for p in citation.split(";") if p.strip()]
        hit = next((index[p] for p in parts if p in index), None)
        if hit is None:
            logger.warning("evidence %r does not resolve to an ingested episode", citation)
        else:
            gold.add(hit)
    return gold


def evidence_recall(retrieved: Sequence[str], gold: Iterable[str], k: int) -> Optional[float]:
    gold = set(gold)
    if not gold:
        return None
    return len(gold & set(retrieved[:k])) / len(gold)


# --------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    n_questions: int = 0
    n_judged: int = 0
    n_unjudged: int = 0
    judge_score: float = 0.0
    ctx_tokens_per_query: float = 0.0
    per_1k_efficiency: float = 0.0
    er_at_k: dict[str, Optional[float]] = field(default_factory=dict)
    per_category: dict[str, dict] = field(default_factory=dict)
    max_retrieval_llm_calls: int = 0
    retrieval_llm_calls: int = 0
    protocol_llm_calls: int = 0
    degraded_judgements: int = 0
    tokenizer: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _score_block(rows: Sequence[Mapping]) -> dict:
    judged = [r for r in rows if r["label"] is not None]
    correct = sum(1 for r in judged if r["label"] == "CORRECT")
    score = correct / len(judged) if judged else 0.0
    tokens = sum(r["context_tokens"] for r in rows) / len(rows) if rows else 0.0
    return {
        "n": len(rows),
        "judged": len(judged),
        "judge_score": score,
        "ctx_tokens_per_query": tokens,
        "per_1k_efficiency": score / (tokens / 1000.0) if tokens else 0.0,
    }


def metrics_from_rows(rows: Sequence[Mapping]) -> RunMetrics:
    """Aggregate a per-question log; also used to recompute from a saved log."""
    rows = sorted(rows, key=lambda r: r["qid"])
    tokenizers = {r["tokenizer"] for r in rows}
    if len(tokenizers) > 1:
        raise ValueError(f"log mixes tokenizers {sorted(tokenizers)}")
    overall = _score_block(rows)
    er = {}
    for k in ER_KS:
        vals = [r["er"][str(k)] for r in rows if r["er"].get(str(k)) is not None]
        er[str(k)] = sum(vals) / len(vals) if vals else None
    by_cat = defaultdict(list)
    for r in rows:
        by_cat[r["category"]].append(r)
    calls = [r["retrieval_llm_calls"] for r in rows]
    return RunMetrics(
        n_questions=len(rows),
        n_judged=overall["judged"],
        n_unjudged=len(rows) - overall["judged"],
        judge_score=overall["judge_score"],
        ctx_tokens_per_query=overall["ctx_tokens_per_query"],
        per_1k_efficiency=overall["per_1k_efficiency"],
        er_at_k=er,
        per_category={c: _score_block(by_cat[c]) for c in CATEGORIES if by_cat[c]},
        max_retrieval_llm_calls=max(calls, default=0),
        retrieval_llm_calls=sum(calls),
        protocol_llm_calls=sum(r["protocol_llm_calls"] for r in rows),
        degraded_judgements=sum(1 for r in rows if r["judge_degraded"]),
        tokenizer=tokenizers.pop() if tokenizers else "",
    )


# --------------------------------------------------------------------------
# running


@dataclass
class EvalClients:
    """Retrieval-side client (routing, rerank) and protocol clients (answer, judge)."""

    retrieval: Optional[ChatClient] = None
    answer: Optional[ChatClient] = None
    judge: Optional[ChatClient] = None


def evaluate_record(
    ckpt: Checkpoint,
    record: QueryRecord,
    config: RunConfig,
    clients: EvalClients,
    embedder: Embedder,
    router=None,
) -> dict:
    trace = answer_query(ckpt, record.question, config, clients.retrieval, embedder, router)
    protocol_calls = 0
    generated, label, reasoning, degraded, error = "", None, "", False, None
    if clients.answer is not None:
        protocol_calls += 1
        try:
            generated = generate_answer(record.question, trace.context, clients.answer)
        except ChatClientError as exc:
            error = f"answer transport: {exc}"
    if clients.judge is not None and error is None:
        protocol_calls += 1
        verdict = judge_answer(record.question, record.gold_answer, generated, clients.judge)
        label, reasoning, degraded, error = (
            verdict.label,
            verdict.reasoning,
            verdict.degraded,
            verdict.error,
        )
    retrieved = trace.retrieval.bundle.episode_ids
    gold = gold_episodes(record.evidence, dia_index(ckpt)) if record.evidence else set()
    return {
        "qid": record.qid,
        "conversation_id": record.conversation_id,
        "category": record.category,
        "question": record.question,
        "gold_answer": record.gold_answer,
        "generated_answer": generated,
        "label": label,
        "reasoning": reasoning,
        "judge_degraded": degraded,
        "error": error,
        "intents": sorted(i.value for i in trace.routing.labels),
        "routing_tier": trace.routing.tier,
        "bundle": retrieved,
        "bundle_scores": trace.retrieval.bundle.scores,
        "selected": trace.context_episodes,
        "context_tokens": trace.context_tokens,
        "context_chars": len(trace.context),
        "tokenizer": trace.tokenizer,
        "retrieval_llm_calls": trace.llm_call_count,
        "protocol_llm_calls": protocol_calls,
        "er": {str(k): evidence_recall(retrieved, gold, k) for k in ER_KS},
        "trace_digest": trace.digest(),
    }


def run_eval(
    checkpoints: Mapping[str, Checkpoint],
    records: Sequence[QueryRecord],
    config: Optional[RunConfig] = None,
    clients: Optional[EvalClients] = None,
    embedder: Optional[Embedder] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> tuple[RunMetrics, list[dict]]:
    """Answer and judge every record; rows come back sorted by qid.

    With ``log_path`` the rows are written as JSONL and the metrics to a
    sibling ``.summary.json``.
    """
    config = config or RunConfig()
    clients = clients or EvalClients()
    embedder = embedder or HashEmbedder(config.embedding_dim)
    router = make_router(config, embedder, clients.retrieval)
    rows = []
    for record in sorted(records, key=lambda r: r.qid):
        ckpt = checkpoints.get(record.conversation_id)
        if ckpt is None:
            if len(checkpoints) != 1:
                raise KeyError(f"no checkpoint for conversation {record.conversation_id!r}")
            ckpt = next(iter(checkpoints.values()))
        rows.append(evaluate_record(ckpt, record, config, clients, embedder, router))
    metrics = metrics_from_rows(rows)
    if log_path is not None:
        write_log(rows, log_path)
        summary = {"config": config.to_dict(), "metrics": metrics.to_dict()}
        summary_path(log_path).write_text(
            json.dumps(summary, sort_keys=True, indent=1) + "\n", "utf-8"
        )
    return metrics, rows


def summary_path(log_path: Union[str, Path]) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".summary.json")


def write_log(rows: Sequence[Mapping], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def read_log(path: Union[str, Path]) -> list[dict]:
    lines = Path(path).read_text("utf-8").splitlines()
    return [json.loads(line) for line in lines if line.strip()]


# --------------------------------------------------------------------------
# comparing two runs


def compare_runs(
    rows_a: Sequence[Mapping], rows_b: Sequence[Mapping], resamples: int = 2000, seed: int = 42
) -> dict:
    """Delta, McNemar mid-p and bootstrap CI overall and per category.

    Questions are paired by qid; unjudged questions on either side are left out.
    """
    tok_a = {r["tokenizer"] for r in rows_a}
    tok_b = {r["tokenizer"] for r in rows_b}
    if len(tok_a | tok_b) > 1:
        raise ValueError(f"refusing to compare runs with tokenizers {sorted(tok_a | tok_b)}")
    b_by_id = {r["qid"]: r for r in rows_b}
    pairs = [
        (ra, b_by_id[ra["qid"]])
        for ra in sorted(rows_a, key=lambda r: r["qid"])
        if ra["qid"] in b_by_id and ra["label"] is not None and b_by_id[ra["qid"]]["label"] is not None
    ]
    groups = {"all": pairs}
    for cat in CATEGORIES:
        sub = [p for p in pairs if p[0]["category"] == cat]
        if sub:
            groups[cat] = sub
    out = {}
    for name, sub in groups.items():
        if not sub:
            continue
        a = [int(x["label"] == "CORRECT") for x, _ in sub]
        b = [int(y["label"] == "CORRECT") for _, y in sub]
        n_b, n_c = discordant(a, b)
        delta, lo, hi = paired_bootstrap_ci(a, b, resamples, seed)
        out[name] = {
            "n": len(sub),
            "delta_pp": delta,
            "ci_pp": [lo, hi],
            "b": n_b,
            "c": n_c,
            "mcnemar_mid_p": mcnemar_mid_p(n_b, n_c),
        }
    return out
