"""On-disk checkpoint: graph, chunk texts, hash bookkeeping and vector stores.

Layout::

    <dir>/graph.json           nodes, edges, episode chain
    <dir>/chunks.json          chunk hash -> {conversation_id, timestamp, text}
    <dir>/hashes.json          ingested chunk hashes (sorted)
    <dir>/vectors/<store>.f32  little-endian float32 row-major matrices
    <dir>/vectors/manifest.json
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .graph import Edge, EdgeKind, MemoryGraph, Node
from .vectors import EDGE_RELATION, EDGE_SEMANTIC, LAYER_STORES, STORE_NAMES, VectorStores

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    graph: MemoryGraph
    stores: VectorStores
    chunks: dict[str, dict] = field(default_factory=dict)


def edge_store_name(kind: EdgeKind) -> str:
    return EDGE_SEMANTIC if kind is EdgeKind.SEMANTIC else EDGE_RELATION


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=False), encoding="utf-8")


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    root = Path(path)
    (root / "vectors").mkdir(parents=True, exist_ok=True)
    _write_json(root / "graph.json", ckpt.graph.to_dict(SCHEMA_VERSION))
    _write_json(root / "chunks.json", ckpt.chunks)
    _write_json(root / "hashes.json", sorted(ckpt.graph.ingested_hashes))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dim": ckpt.stores.dim,
        "embedder": ckpt.stores.embedder_identity,
        "stores": {},
    }
    for store in ckpt.stores:
        rows = store.rows if len(store) else np.zeros((0, store.dim), dtype=np.float32)
        (root / "vectors" / f"{store.name}.f32").write_bytes(rows.astype("<f4").tobytes())
        manifest["stores"][store.name] = {"rows": len(store)}
    _write_json(root / "vectors" / "manifest.json", manifest)
    return root


def load_checkpoint(
    path: Union[str, Path], embedder_identity: Optional[str] = None
) -> Checkpoint:
    root = Path(path)
    try:
        graph_doc = json.loads((root / "graph.json").read_text(encoding="utf-8"))
        manifest = json.loads((root / "vectors" / "manifest.json").read_text(encoding="utf-8"))
        hashes = json.loads((root / "hashes.json").read_text(encoding="utf-8"))
        chunks = json.loads((root / "chunks.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {root}: {exc.filename}") from exc
    for doc in (graph_doc, manifest):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise CheckpointError(
                f"schema version {doc.get('schema_version')} != {SCHEMA_VERSION}"
            )
    if embedder_identity is not None and manifest.get("embedder") != embedder_identity:
        logger.warning(
            "checkpoint embedder %r differs from configured %r",
            manifest.get("embedder"),
            embedder_identity,
        )

    nodes = [Node.from_dict(n) for n in graph_doc["nodes"]]
    edges = [Edge.from_dict(e) for e in graph_doc["edges"]]
    graph = MemoryGraph.from_parts(nodes, edges, graph_doc["episode_chain"], hashes)

    dim = int(manifest["dim"])
    stores = VectorStores(dim, manifest.get("embedder", ""))
    owners: dict[str, dict[int, str]] = {name: {} for name in STORE_NAMES}
    for node in nodes:
        if node.embedding_ref is not None:
            owners[LAYER_STORES[node.layer]][node.embedding_ref] = node.id
    for edge in edges:
        if edge.embedding_ref is not None:
            owners[edge_store_name(edge.kind)][edge.embedding_ref] = edge.id
    for name in STORE_NAMES:
        raw = (root / "vectors" / f"{name}.f32").read_bytes()
        if len(raw) % (dim * 4):
            raise CheckpointError(f"corrupt vector store {name}: {len(raw)} bytes")
        rows = np.frombuffer(raw, dtype="<f4").reshape(-1, dim).astype(np.float32)
        expected = manifest["stores"].get(name, {}).get("rows", 0)
        if len(rows) != expected or len(owners[name]) != expected:
            raise CheckpointError(
                f"vector store {name}: {len(rows)} rows, manifest says {expected}, "
                f"{len(owners[name])} owners"
            )
        try:
            ordered = [owners[name][i] for i in range(expected)]
        except KeyError as exc:
            raise CheckpointError(f"vector store {name}: row {exc} has no owner") from None
        stores[name].set_rows(rows, ordered)
    return Checkpoint(graph=graph, stores=stores, chunks=chunks)
