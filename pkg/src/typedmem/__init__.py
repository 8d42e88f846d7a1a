"""Typed four-layer conversational memory with min-cost path retrieval."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compression import Candidate, CompressionResult, compress, parse_scores, render_rerank_prompt
from .config import IngestConfig, RunConfig
from .evaluation import EvalClients, QueryRecord, RunMetrics, compare_runs, evidence_recall, run_eval
from .extraction import ExtractionResult, RawChunk, chunks_from_conversation
from .graph import Edge, EdgeKind, GraphError, LayerKind, MemoryGraph, Node
from .ingestion import Ingestor, IngestionReport, ingest_conversation
from .kernels import BACKEND
from .llm import ChatClient, ChatClientError, HttpChatClient, StubChatClient
from .pipeline import QueryTrace, answer_query, judge_answer
from .retrieval import Anchor, Bundle, EdgeCostModel, PathInstance, edge_cost, retrieve
from .routing import IntentLabel, IntentRouter, RoutingResult
from .stats import mcnemar_mid_p, paired_bootstrap_ci, wilson_ci
from .tokens import count_tokens
from .vectors import FlatVectorStore, HashEmbedder, HttpEmbedder, VectorStores, embed_and_normalize

__version__ = "0.1.0"

__all__ = [
    "Anchor",
    "BACKEND",
    "Bundle",
    "Candidate",
    "ChatClient",
    "ChatClientError",
    "Checkpoint",
    "CompressionResult",
    "Edge",
    "EdgeCostModel",
    "EdgeKind",
    "EvalClients",
    "ExtractionResult",
    "FlatVectorStore",
    "GraphError",
    "HashEmbedder",
    "HttpChatClient",
    "HttpEmbedder",
    "IngestConfig",
    "IngestionReport",
    "Ingestor",
    "IntentLabel",
    "IntentRouter",
    "LayerKind",
    "MemoryGraph",
    "Node",
    "PathInstance",
    "QueryRecord",
    "QueryTrace",
    "RawChunk",
    "RoutingResult",
    "RunConfig",
    "RunMetrics",
    "StubChatClient",
    "VectorStores",
    "answer_query",
    "chunks_from_conversation",
    "compare_runs",
    "compress",
    "count_tokens",
    "edge_cost",
    "embed_and_normalize",
    "evidence_recall",
    "ingest_conversation",
    "judge_answer",
    "load_checkpoint",
    "mcnemar_mid_p",
    "paired_bootstrap_ci",
    "parse_scores",
    "render_rerank_prompt",
    "retrieve",
    "run_eval",
    "save_checkpoint",
    "wilson_ci",
]
