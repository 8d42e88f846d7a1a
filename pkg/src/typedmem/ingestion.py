"""Turn conversation chunks into memory-graph nodes and edges.

Per chunk: hash dedup, extraction (with fallback), node construction and
merging, synchronous relation edges, embedding.  Causal edges come from a
windowed consolidation pass that fires every few fresh chunks and once more
at the end of the conversation.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .checkpoint import Checkpoint, edge_store_name, save_checkpoint
from .config import IngestConfig
from .extraction import (
    ExtractionError,
    ExtractionResult,
    Extractor,
    FallbackExtractor,
    RawChunk,
    extract,
    parse_loose_iso,
)
from .graph import (
    Edge,
    EdgeKind,
    GraphError,
    LayerKind,
    MemoryGraph,
    Node,
    make_node_id,
    normalize_text,
    parse_instant,
)
from .jsonutil import first_json
from .llm import ChatClient, ChatClientError
from .prompts import render
from .vectors import Embedder, HashEmbedder, VectorStores, embed_and_normalize, row_dots

logger = logging.getLogger(__name__)


@dataclass
class IngestionReport:
    fresh: int = 0
    duplicate: int = 0
    failed: int = 0
    degraded: int = 0
    causal_passes: int = 0
    causal_failures: int = 0
    causal_accepted: int = 0
    causal_dropped: int = 0
    edges: Counter = field(default_factory=Counter)
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fresh": self.fresh,
            "duplicate": self.duplicate,
            "failed": self.failed,
            "degraded": self.degraded,
            "causal_passes": self.causal_passes,
            "causal_failures": self.causal_failures,
            "causal_accepted": self.causal_accepted,
            "causal_dropped": self.causal_dropped,
            "edges": dict(sorted(self.edges.items())),
            "failures": self.failures,
        }


@dataclass
class CausalPair:
    cause_id: str
    effect_id: str
    description: str
    confidence: float


class Ingestor:
    """Single writer over one conversation's graph and vector stores."""

    def __init__(
        self,
        embedder: Optional[Embedder] = None,
        config: Optional[IngestConfig] = None,
        checkpoint: Optional[Checkpoint] = None,
    ):
        self.embedder = embedder or HashEmbedder()
        self.config = config or IngestConfig()
        if checkpoint is None:
            checkpoint = Checkpoint(
                MemoryGraph(), VectorStores(self.embedder.dimension, self.embedder.identity)
            )
        self.ckpt = checkpoint
        self.report = IngestionReport()
        self._pending_causal = 0
        self._since_attempt = 0
        self._rebuild_indexes()

    @property
    def graph(self) -> MemoryGraph:
        return self.ckpt.graph

    @property
    def stores(self) -> VectorStores:
        return self.ckpt.stores

    def _rebuild_indexes(self) -> None:
        g = self.graph
        self._entity_by_name: dict[tuple[str, str], str] = {}
        self._entity_fps: dict[str, list[str]] = {}
        self._episode_fps: dict[str, list[str]] = {}
        self._episode_facets: dict[str, list[str]] = {}
        for node in g.nodes.values():
            if node.layer is LayerKind.ENTITY:
                self._entity_by_name[(node.conversation_id, normalize_text(node.text))] = node.id
        for edge in g.edges.values():
            if edge.kind is not EdgeKind.BELONGS_TO:
                continue
            src, dst = g.nodes[edge.src], g.nodes[edge.dst]
            if src.layer is LayerKind.ENTITY and dst.layer is LayerKind.FACET_POINT:
                self._entity_fps.setdefault(src.id, []).append(dst.id)
            elif src.layer is LayerKind.FACET and dst.layer is LayerKind.EPISODE:
                self._episode_facets.setdefault(dst.id, []).append(src.id)
        for node in g.nodes.values():
            if node.layer is LayerKind.FACET_POINT:
                try:
                    self._episode_fps.setdefault(g.episode_of(node.id), []).append(node.id)
                except GraphError:
                    logger.warning("facet point %s has no episode", node.id)

    # -- primitives -------------------------------------------------------

    def _embed(self, text: str) -> np.ndarray:
        return embed_and_normalize(self.embedder, text)

    def _add_node(self, node: Node, vector: Optional[np.ndarray] = None) -> str:
        if vector is None:
            vector = self._embed(node.text)
        self.graph.add_node(node)
        node.embedding_ref = self.stores.for_layer(node.layer).add(node.id, vector)
        return node.id

    def _add_edge(self, edge: Edge, text: Optional[str] = None) -> Optional[str]:
        """Add unless an identical (kind, src, dst) edge exists."""
        if self.graph.has_edge(edge.kind, edge.src, edge.dst) or edge.src == edge.dst:
            return None
        self.graph.add_edge(edge)
        if edge.kind.is_relation:
            label = text or edge.description or self._edge_text(edge)
            edge.embedding_ref = self.stores[edge_store_name(edge.kind)].add(
                edge.id, self._embed(label)
            )
        self.report.edges[edge.kind.value] += 1
        return edge.id

    def _edge_text(self, edge: Edge) -> str:
        src, dst = self.graph.nodes[edge.src], self.graph.nodes[edge.dst]
        return f"{src.text} [{edge.kind.value}] {dst.text}"

    # -- operations -------------------------------------------------------

    def dedup_check(self, chunk: RawChunk) -> str:
        return "duplicate" if chunk.content_hash in self.graph.ingested_hashes else "fresh"

    def merge_entity(
        self,
        name: str,
        entity_type: str,
        conversation_id: str,
        embedding: Optional[np.ndarray] = None,
    ) -> str:
        if not name.strip():
            raise ValueError("entity name must be nonempty")
        key = (conversation_id, normalize_text(name))
        if key in self._entity_by_name:
            return self._entity_by_name[key]
        vector = self._embed(name) if embedding is None else embedding
        store = self.stores["entity"]
        if len(store):
            sims = store.similarities(vector)
            for row in np.argsort(-sims, kind="stable"):
                if sims[row] <= self.config.entity_merge_threshold:
                    break
                owner = self.graph.nodes[store.owners[row]]
                if owner.conversation_id == conversation_id:
                    self._entity_by_name[key] = owner.id
                    return owner.id
        node = Node(
            id=make_node_id(LayerKind.ENTITY, conversation_id, name),
            layer=LayerKind.ENTITY,
            text=name.strip(),
            conversation_id=conversation_id,
            entity_type=entity_type,
        )
        self._add_node(node, vector)
        self._entity_by_name[key] = node.id
        return node.id

    def resolve_entity(self, name: Optional[str], conversation_id: str) -> Optional[str]:
        if not name or not name.strip():
            return None
        return self._entity_by_name.get((conversation_id, normalize_text(name)))

    def merge_facet(
        self, episode_id: str, theme: str, embedding: Optional[np.ndarray] = None
    ) -> str:
        episode = self.graph.node(episode_id)
        vector = self._embed(theme) if embedding is None else embedding
        store = self.stores["facet"]
        best_id, best_sim = None, self.config.facet_merge_threshold
        for facet_id in self._episode_facets.get(episode_id, []):
            sim = float(row_dots(store.vector(self.graph.nodes[facet_id].embedding_ref), vector)[0])
            if sim > best_sim:
                best_id, best_sim = facet_id, sim
        if best_id is not None:
            return best_id
        node = Node(
            id=make_node_id(
                LayerKind.FACET, episode.conversation_id, theme,
                salt=f"{episode_id}:{len(self._episode_facets.get(episode_id, []))}",
            ),
            layer=LayerKind.FACET,
            text=theme.strip() or episode.text,
            conversation_id=episode.conversation_id,
        )
        self._add_node(node, vector)
        self._add_edge(Edge(EdgeKind.BELONGS_TO, node.id, episode_id))
        self._episode_facets.setdefault(episode_id, []).append(node.id)
        if self.config.enable_semantic_edges:
            self._link_semantic(node, vector)
        return node.id

    def _link_semantic(self, facet: Node, vector: np.ndarray) -> None:
        store = self.stores["facet"]
        sims = store.similarities(vector)
        own_episode = self.graph.episode_of(facet.id)
        for row in np.flatnonzero(sims > self.config.semantic_threshold):
            other = store.owners[row]
            if other != facet.id and self.graph.episode_of(other) != own_episode:
                self._add_edge(Edge(EdgeKind.SEMANTIC, other, facet.id))

    def _fp_time(self, fp: dict, temporal: Sequence[dict]) -> Optional[str]:
        stamp = fp.get("timestamp_text")
        if not stamp:
            return None
        for info in temporal:
            if info["normalized_time"] and normalize_text(info["time_expression"]) == normalize_text(stamp):
                return parse_loose_iso(info["normalized_time"]).isoformat()
        try:
            return parse_loose_iso(stamp).isoformat()
        except (GraphError, ValueError):
            return None

    def _effective_time(self, fp_id: str) -> datetime:
        node = self.graph.nodes[fp_id]
        if node.timestamp:
            return parse_instant(node.timestamp)
        return parse_instant(self.graph.nodes[self.graph.episode_of(fp_id)].timestamp)

    def build_chunk_subgraph(self, chunk: RawChunk, result: ExtractionResult) -> str:
        g = self.graph
        conv = chunk.conversation_id
        ts = parse_instant(chunk.header_timestamp).isoformat()
        episode = Node(
            id=make_node_id(LayerKind.EPISODE, conv, chunk.content_hash, ts),
            layer=LayerKind.EPISODE,
            text=result.episode_summary.strip(),
            conversation_id=conv,
            timestamp=ts,
        )
        self._add_node(episode)
        pos = g.episode_chain.index(episode.id)
        if self.config.link_episode_chain:
            if pos > 0:
                self._add_edge(Edge(EdgeKind.TEMPORAL, g.episode_chain[pos - 1], episode.id))
            if pos + 1 < len(g.episode_chain):
                self._add_edge(Edge(EdgeKind.TEMPORAL, episode.id, g.episode_chain[pos + 1]))

        for ent in result.entities:
            self.merge_entity(ent["name"], ent["entity_type"], conv)

        prior_entity_fps = {k: list(v) for k, v in self._entity_fps.items()}
        new_fps: list[str] = []
        fp_entity: dict[str, str] = {}
        for i, fp in enumerate(result.facet_points):
            node = Node(
                id=make_node_id(LayerKind.FACET_POINT, conv, fp["content"], ts, salt=f"{episode.id}:{i}"),
                layer=LayerKind.FACET_POINT,
                text=fp["content"].strip(),
                conversation_id=conv,
                timestamp=self._fp_time(fp, result.temporal_info),
            )
            self._add_node(node)
            new_fps.append(node.id)
            entity_id = self.resolve_entity(fp.get("related_entity_name"), conv)
            if entity_id is not None:
                fp_entity[node.id] = entity_id
                self._add_edge(Edge(EdgeKind.BELONGS_TO, entity_id, node.id))
                self._add_edge(Edge(EdgeKind.INVOLVES_ENTITY, node.id, entity_id))
                self._entity_fps.setdefault(entity_id, []).append(node.id)

        assigned: set[int] = set()
        for facet in result.facets:
            if not facet["facet_point_indices"]:
                continue
            facet_id = self.merge_facet(episode.id, facet["theme"] or episode.text)
            for idx in facet["facet_point_indices"]:
                self._add_edge(Edge(EdgeKind.BELONGS_TO, new_fps[idx], facet_id))
                assigned.add(idx)
        for idx, fp_id in enumerate(new_fps):
            if idx not in assigned:
                facet_id = self.merge_facet(episode.id, g.nodes[fp_id].text)
                self._add_edge(Edge(EdgeKind.BELONGS_TO, fp_id, facet_id))
        self._episode_fps[episode.id] = list(new_fps)

        self._link_temporal(episode.id, new_fps)
        self._link_evolution(new_fps, fp_entity, prior_entity_fps)

        g.ingested_hashes.add(chunk.content_hash)
        self.ckpt.chunks[chunk.content_hash] = {
            "conversation_id": conv,
            "timestamp": ts,
            "text": chunk.text,
            "episode_id": episode.id,
            "dia_ids": list(chunk.dia_ids),
        }
        return episode.id

    def _link_temporal(self, episode_id: str, new_fps: list[str]) -> None:
        g = self.graph
        pos = g.episode_chain.index(episode_id)
        window = g.episode_chain[max(0, pos - self.config.temporal_window) : pos]
        older = [fp for ep in window for fp in self._episode_fps.get(ep, [])]
        timed_new = [fp for fp in new_fps if g.nodes[fp].timestamp]
        timed_old = [fp for fp in older if g.nodes[fp].timestamp]
        pairs = [(a, b) for i, a in enumerate(timed_new) for b in timed_new[i + 1 :]]
        pairs += [(a, b) for a in timed_old for b in timed_new]
        for a, b in pairs:
            ta, tb = parse_instant(g.nodes[a].timestamp), parse_instant(g.nodes[b].timestamp)
            if ta == tb:
                continue
            src, dst = (a, b) if ta < tb else (b, a)
            self._add_edge(Edge(EdgeKind.TEMPORAL, src, dst))

    def _link_evolution(
        self, new_fps: list[str], fp_entity: dict[str, str], prior: dict[str, list[str]]
    ) -> None:
        by_entity: dict[str, list[str]] = {}
        for fp in new_fps:
            if fp in fp_entity:
                by_entity.setdefault(fp_entity[fp], []).append(fp)
        for entity_id, fps in by_entity.items():
            ordered = sorted(fps, key=self._effective_time)
            existing = prior.get(entity_id, [])
            if existing:
                # latest existing; later insertion wins ties
                latest = max(reversed(existing), key=self._effective_time)
                first = ordered[0]
                if self._effective_time(latest) <= self._effective_time(first):
                    self._add_edge(Edge(EdgeKind.EVOLUTION, latest, first))
                else:
                    self._add_edge(Edge(EdgeKind.EVOLUTION, first, latest))
            for a, b in zip(ordered, ordered[1:]):
                self._add_edge(Edge(EdgeKind.EVOLUTION, a, b))

    def consolidate_causal(self, client: ChatClient) -> list[CausalPair]:
        """One causal pass over the most recent Episodes.

        Raises :class:`ChatClientError` when the backend fails or the reply is
        unparseable; the caller keeps the pass pending.
        """
        g = self.graph
        recent = g.episode_chain[-self.config.causal_window :]
        if not recent:
            return []
        events = "\n".join(f"- [{eid}]: {g.nodes[eid].text}" for eid in recent)
        reply = client.complete(render("causal", events=events))
        doc = first_json(reply, dict)
        if doc is None or not isinstance(doc.get("causal_pairs"), list):
            raise ChatClientError("causal reply has no causal_pairs array")
        accepted = []
        for item in doc["causal_pairs"]:
            pair = self._causal_pair(item)
            if pair is None:
                self.report.causal_dropped += 1
                continue
            edge = Edge(
                EdgeKind.CAUSAL,
                pair.cause_id,
                pair.effect_id,
                description=pair.description or None,
                confidence=pair.confidence,
            )
            if self._add_edge(edge, text=pair.description or None) is None:
                self.report.causal_dropped += 1
                continue
            accepted.append(pair)
        self.report.causal_accepted += len(accepted)
        return accepted

    def _causal_pair(self, item) -> Optional[CausalPair]:
        if not isinstance(item, dict):
            return None
        cause, effect = item.get("cause_id"), item.get("effect_id")
        conf = item.get("confidence")
        if not isinstance(conf, (int, float)) or isinstance(conf, bool):
            return None
        conf = float(conf)
        if not 0.0 <= conf <= 1.0 or conf < self.config.causal_confidence_floor:
            return None
        g = self.graph
        for end in (cause, effect):
            if not isinstance(end, str) or end not in g.nodes:
                return None
            if g.nodes[end].layer is not LayerKind.EPISODE:
                return None
        if cause == effect:
            return None
        desc = item.get("description")
        return CausalPair(cause, effect, desc if isinstance(desc, str) else "", conf)

    def _run_causal(self, client: Optional[ChatClient]) -> None:
        if client is None:
            return
        self.report.causal_passes += 1
        self._since_attempt = 0
        try:
            self.consolidate_causal(client)
        except ChatClientError as exc:
            self.report.causal_failures += 1
            logger.warning("causal pass failed (%s); will retry at next trigger", exc)
            return
        self._pending_causal = 0

    def ingest_chunk(
        self, chunk: RawChunk, extractor: Extractor, chat_client: Optional[ChatClient] = None
    ) -> Optional[str]:
        if self.dedup_check(chunk) == "duplicate":
            self.report.duplicate += 1
            return None
        try:
            result, degraded = extract(extractor, chunk)
        except ExtractionError as exc:
            self.report.failed += 1
            self.report.failures.append({"content_hash": chunk.content_hash, "error": str(exc)})
            return None
        episode_id = self.build_chunk_subgraph(chunk, result)
        self.report.fresh += 1
        self.report.degraded += int(degraded)
        self._pending_causal += 1
        self._since_attempt += 1
        if self._since_attempt >= self.config.causal_interval:
            self._run_causal(chat_client)
        return episode_id

    def ingest_conversation(
        self,
        chunks: Sequence[RawChunk],
        extractor: Extractor,
        chat_client: Optional[ChatClient] = None,
        out: Optional[Union[str, Path]] = None,
    ) -> IngestionReport:
        for chunk in chunks:
            self.ingest_chunk(chunk, extractor, chat_client)
        if self._pending_causal > 0:
            self._run_causal(chat_client)
        if out is not None:
            save_checkpoint(self.ckpt, out)
        return self.report


def ingest_conversation(
    chunks: Sequence[RawChunk],
    extractor: Extractor,
    chat_client: Optional[ChatClient] = None,
    embedder: Optional[Embedder] = None,
    config: Optional[IngestConfig] = None,
    out: Optional[Union[str, Path]] = None,
) -> tuple[Checkpoint, IngestionReport]:
    ingestor = Ingestor(embedder, config)
    report = ingestor.ingest_conversation(chunks, extractor, chat_client, out)
    return ingestor.ckpt, report
