"""Command line: ``typedmem ingest|query|eval|stats``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint
from .config import INTENT_MODES, RunConfig
from .evaluation import EvalClients, compare_runs, load_records, read_log, run_eval
from .extraction import FileExtractor, LLMExtractor, load_conversation
from .ingestion import ingest_conversation
from .llm import HttpChatClient, StubChatClient
from .pipeline import answer_query
from .vectors import HashEmbedder, HttpEmbedder


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--no-n1", action="store_true", help="backbone templates only (no relation bridges)")
    p.add_argument("--no-n2", action="store_true", help="disable intent-conditioned edge discounts")
    p.add_argument("--no-n3", action="store_true", help="skip reranking; pass the whole bundle")
    p.add_argument("--intent-mode", choices=INTENT_MODES)


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--llm",
        choices=("http", "stub"),
        default="http",
        help="chat backend: OpenAI-compatible HTTP (env TYPEDMEM_CHAT_*) or the offline rule stub",
    )
    p.add_argument(
        "--embedder",
        choices=("hash", "http"),
        default="hash",
        help="embedding backend: deterministic hash projection or HTTP (env TYPEDMEM_EMBED_*)",
    )


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "no_n1", False):
        changes["enable_bridges"] = False
    if getattr(args, "no_n2", False):
        changes["enable_edge_costs"] = False
    if getattr(args, "no_n3", False):
        changes["enable_rerank"] = False
    if getattr(args, "intent_mode", None):
        changes["intent_mode"] = args.intent_mode
    return cfg.with_flags(**changes) if changes else cfg


def _chat(args):
    return StubChatClient("rules") if args.llm == "stub" else HttpChatClient()


def _embedder(args, dim: int):
    return HttpEmbedder(dimension=dim) if args.embedder == "http" else HashEmbedder(dim)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    chunks = load_conversation(args.conversation)
    chat = _chat(args)
    extractor = FileExtractor.from_path(args.pre_extracted) if args.pre_extracted else LLMExtractor(chat)
    _, report = ingest_conversation(
        chunks, extractor, chat, _embedder(args, cfg.embedding_dim), cfg.ingest, args.out
    )
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0 if report.failed == 0 else 1


def cmd_query(args) -> int:
    cfg = _config(args)
    embedder = _embedder(args, cfg.embedding_dim)
    ckpt = load_checkpoint(args.ckpt, embedder.identity)
    trace = answer_query(ckpt, args.question, cfg, _chat(args), embedder)
    if args.trace:
        Path(args.trace).write_text(json.dumps(trace.to_dict(), indent=1, sort_keys=True), "utf-8")
    print(trace.context)
    print(
        f"# intents={sorted(i.value for i in trace.routing.labels)} tier={trace.routing.tier} "
        f"tokens={trace.context_tokens} llm_calls={trace.llm_call_count}",
        file=sys.stderr,
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    embedder = _embedder(args, cfg.embedding_dim)
    root = Path(args.ckpt_dir)
    if (root / "graph.json").exists():
        dirs = [root]
    else:
        dirs = sorted(p for p in root.iterdir() if (p / "graph.json").exists())
    checkpoints = {}
    for d in dirs:
        ckpt = load_checkpoint(d, embedder.identity)
        convs = {r["conversation_id"] for r in ckpt.chunks.values()} or {d.name}
        for conv in convs:
            checkpoints[conv] = ckpt
    chat = _chat(args)
    clients = EvalClients(retrieval=chat, answer=chat, judge=chat)
    metrics, _ = run_eval(checkpoints, load_records(args.qa), cfg, clients, embedder, args.out)
    print(json.dumps(metrics.to_dict(), indent=1, sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    result = compare_runs(read_log(args.a), read_log(args.b), args.resamples, args.seed)
    print(json.dumps(result, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="typedmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a checkpoint from one conversation")
    p.add_argument("--conversation", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--pre-extracted", type=Path, help="JSON map content hash -> extraction record")
    p.add_argument("--config", type=Path)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="answer one question against a checkpoint")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--question", required=True)
    p.add_argument("--trace", type=Path, help="write the full query trace as JSON")
    _add_run_flags(p)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run a QA file and write a JSONL report")
    p.add_argument("--ckpt-dir", required=True, type=Path)
    p.add_argument("--qa", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_run_flags(p)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="paired comparison of two eval logs")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, type=Path)
    p.add_argument("--resamples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
