"""Typed four-layer memory graph.

Nodes live on one of four layers (Entity, FacetPoint, Facet, Episode) and are
connected by hierarchical ``BelongsTo`` edges plus five kinds of relation
edges.  The graph is append-only: nothing written during ingestion is ever
removed.
"""

from __future__ import annotations

import bisect
import hashlib
import threading
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Literal, Optional

Direction = Literal["out", "in", "both"]


class GraphError(ValueError):
    """Raised when a mutation or lookup violates the graph contract."""


class LayerKind(str, Enum):
    ENTITY = "Entity"
    FACET_POINT = "FacetPoint"
    FACET = "Facet"
    EPISODE = "Episode"

    @property
    def rank(self) -> int:
        return _LAYER_RANK[self]


_LAYER_RANK = {
    LayerKind.ENTITY: 0,
    LayerKind.FACET_POINT: 1,
    LayerKind.FACET: 2,
    LayerKind.EPISODE: 3,
}

_LAYER_PREFIX = {
    LayerKind.ENTITY: "en",
    LayerKind.FACET_POINT: "fp",
    LayerKind.FACET: "fc",
    LayerKind.EPISODE: "ep",
}


class EdgeKind(str, Enum):
    BELONGS_TO = "BelongsTo"
    SEMANTIC = "Semantic"
    TEMPORAL = "Temporal"
    CAUSAL = "Causal"
    EVOLUTION = "Evolution"
    INVOLVES_ENTITY = "InvolvesEntity"

    @property
    def is_relation(self) -> bool:
        return self is not EdgeKind.BELONGS_TO


# (src layer, dst layer) pairs a BelongsTo edge may connect.  Entity -> Facet
# is the shortcut used by the ``En -> Fc -> Ep`` backbone template.
BELONGS_TO_LAYERS = frozenset(
    {
        (LayerKind.ENTITY, LayerKind.FACET_POINT),
        (LayerKind.ENTITY, LayerKind.FACET),
        (LayerKind.FACET_POINT, LayerKind.FACET),
        (LayerKind.FACET, LayerKind.EPISODE),
    }
)

ENTITY_TYPES = ("person", "organization", "place", "concept", "event", "other")
CAUSAL_CONFIDENCE_FLOOR = 0.7


def parse_instant(value: str) -> datetime:
    """Parse an ISO-8601 string; naive values are taken as UTC."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        moment = datetime.fromisoformat(text)
    except ValueError as exc:
        raise GraphError(f"not an ISO-8601 instant: {value!r}") from exc
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment


def normalize_text(text: str) -> str:
    """NFC-normalize, casefold and collapse whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).casefold().split())


def make_node_id(
    layer: LayerKind,
    conversation_id: str,
    text: str,
    timestamp: Optional[str] = None,
    salt: str = "",
) -> str:
    payload = "\x1f".join(
        [layer.value, conversation_id, normalize_text(text), timestamp or "", salt]
    )
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
    return f"{_LAYER_PREFIX[layer]}_{digest}"


@dataclass
class Node:
    id: str
    layer: LayerKind
    text: str
    conversation_id: str = ""
    timestamp: Optional[str] = None
    entity_type: Optional[str] = None
    embedding_ref: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layer": self.layer.value,
            "text": self.text,
            "conversation_id": self.conversation_id,
            "timestamp": self.timestamp,
            "entity_type": self.entity_type,
            "embedding_ref": self.embedding_ref,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Node":
        return cls(
            id=data["id"],
            layer=LayerKind(data["layer"]),
            text=data["text"],
            conversation_id=data.get("conversation_id", ""),
            timestamp=data.get("timestamp"),
            entity_type=data.get("entity_type"),
            embedding_ref=data.get("embedding_ref"),
        )


@dataclass
class Edge:
    kind: EdgeKind
    src: str
    dst: str
    description: Optional[str] = None
    confidence: Optional[float] = None
    embedding_ref: Optional[int] = None
    id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "description": self.description,
            "confidence": self.confidence,
            "embedding_ref": self.embedding_ref,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Edge":
        return cls(
            id=data["id"],
            kind=EdgeKind(data["kind"]),
            src=data["src"],
            dst=data["dst"],
            description=data.get("description"),
            confidence=data.get("confidence"),
            embedding_ref=data.get("embedding_ref"),
        )


@dataclass
class MemoryGraph:
    """Append-only typed multigraph with per-(node, kind) adjacency."""

    nodes: dict[str, Node] = field(default_factory=dict)
    edges: dict[str, Edge] = field(default_factory=dict)
    episode_chain: list[str] = field(default_factory=list)
    ingested_hashes: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self._out: dict[tuple[str, EdgeKind], list[str]] = {}
        self._in: dict[tuple[str, EdgeKind], list[str]] = {}
        self._edge_seq: dict[str, int] = {}
        self._edge_keys: set[tuple[EdgeKind, str, str]] = set()
        self._chain_keys: list[datetime] = []
        self._next_edge = 0
        self._lock = threading.RLock()

    # -- mutation ---------------------------------------------------------

    def add_node(self, node: Node) -> str:
        with self._lock:
            if node.id in self.nodes:
                raise GraphError(f"duplicate node id {node.id}")
            if (node.layer is LayerKind.ENTITY) != (node.entity_type is not None):
                raise GraphError("entity_type is required on Entity nodes and forbidden elsewhere")
            if node.layer is LayerKind.ENTITY and node.entity_type not in ENTITY_TYPES:
                raise GraphError(f"unknown entity_type {node.entity_type!r}")
            moment = None
            if node.timestamp is not None:
                moment = parse_instant(node.timestamp)
            if node.layer is LayerKind.EPISODE:
                if moment is None:
                    raise GraphError("Episode nodes need a timestamp")
                pos = bisect.bisect_right(self._chain_keys, moment)
                self._chain_keys.insert(pos, moment)
                self.episode_chain.insert(pos, node.id)
            self.nodes[node.id] = node
            return node.id

    def add_edge(self, edge: Edge) -> str:
        with self._lock:
            src = self.nodes.get(edge.src)
            dst = self.nodes.get(edge.dst)
            if src is None or dst is None:
                raise GraphError(f"dangling endpoint in {edge.kind.value} edge {edge.src}->{edge.dst}")
            if edge.kind is EdgeKind.BELONGS_TO:
                if (src.layer, dst.layer) not in BELONGS_TO_LAYERS:
                    raise GraphError(
                        f"BelongsTo cannot go {src.layer.value} -> {dst.layer.value}"
                    )
                if edge.embedding_ref is not None:
                    raise GraphError("BelongsTo edges carry no embedding")
            if edge.kind is EdgeKind.CAUSAL:
                if edge.confidence is None or edge.confidence < CAUSAL_CONFIDENCE_FLOOR:
                    raise GraphError(f"causal confidence {edge.confidence} below floor")
                if edge.confidence > 1.0:
                    raise GraphError(f"causal confidence {edge.confidence} above 1")
            key = (edge.kind, edge.src, edge.dst)
            if key in self._edge_keys:
                raise GraphError(f"duplicate {edge.kind.value} edge {edge.src}->{edge.dst}")
            if not edge.id:
                edge.id = f"e{self._next_edge}"
            if edge.id in self.edges:
                raise GraphError(f"duplicate edge id {edge.id}")
            self._register_edge(edge)
            return edge.id

    def _register_edge(self, edge: Edge) -> None:
        self._edge_keys.add((edge.kind, edge.src, edge.dst))
        self._edge_seq[edge.id] = len(self._edge_seq)
        if edge.id.startswith("e") and edge.id[1:].isdigit():
            self._next_edge = max(self._next_edge, int(edge.id[1:]) + 1)
        self.edges[edge.id] = edge
        self._out.setdefault((edge.src, edge.kind), []).append(edge.id)
        self._in.setdefault((edge.dst, edge.kind), []).append(edge.id)

    def has_edge(self, kind: EdgeKind, src: str, dst: str) -> bool:
        return (kind, src, dst) in self._edge_keys

    # -- queries ----------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id}") from None

    def edge_order(self, edge_id: str) -> int:
        return self._edge_seq[edge_id]

    def neighbors(
        self, node_id: str, kind: EdgeKind, direction: Direction = "out"
    ) -> list[tuple[Edge, Node]]:
        """Edges of ``kind`` touching ``node_id``, in edge insertion order."""
        if node_id not in self.nodes:
            raise GraphError(f"unknown node id {node_id}")
        pairs: list[tuple[int, Edge, Node]] = []
        if direction in ("out", "both"):
            for eid in self._out.get((node_id, kind), ()):
                edge = self.edges[eid]
                pairs.append((self._edge_seq[eid], edge, self.nodes[edge.dst]))
        if direction in ("in", "both"):
            for eid in self._in.get((node_id, kind), ()):
                edge = self.edges[eid]
                if direction == "both" and edge.src == edge.dst:
                    continue
                pairs.append((self._edge_seq[eid], edge, self.nodes[edge.src]))
        if direction == "both":
            pairs.sort(key=lambda item: item[0])
        return [(edge, other) for _, edge, other in pairs]

    def episode_of(self, node_id: str) -> str:
        """The unique Episode reachable from ``node_id`` along BelongsTo edges."""
        node = self.node(node_id)
        if node.layer is LayerKind.EPISODE:
            return node.id
        found: set[str] = set()
        frontier = [node.id]
        seen = {node.id}
        while frontier:
            current = frontier.pop()
            for _, parent in self.neighbors(current, EdgeKind.BELONGS_TO, "out"):
                if parent.layer is LayerKind.EPISODE:
                    found.add(parent.id)
                elif parent.id not in seen:
                    seen.add(parent.id)
                    frontier.append(parent.id)
        if len(found) != 1:
            what = "orphan" if not found else f"spans {len(found)} episodes"
            raise GraphError(f"node {node_id} is {what}")
        return found.pop()

    def nodes_in_layer(self, layer: LayerKind) -> Iterator[Node]:
        return (n for n in self.nodes.values() if n.layer is layer)

    def edges_of_kind(self, kind: EdgeKind) -> Iterator[Edge]:
        return (e for e in self.edges.values() if e.kind is kind)

    def chain_position(self) -> dict[str, int]:
        return {eid: i for i, eid in enumerate(self.episode_chain)}

    def __len__(self) -> int:
        return len(self.nodes)

    # -- serialization ----------------------------------------------------

    def to_dict(self, schema_version: int) -> dict:
        return {
            "schema_version": schema_version,
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": [e.to_dict() for e in self.edges.values()],
            "episode_chain": list(self.episode_chain),
        }

    @classmethod
    def from_parts(
        cls,
        nodes: Iterable[Node],
        edges: Iterable[Edge],
        episode_chain: Iterable[str],
        hashes: Iterable[str] = (),
    ) -> "MemoryGraph":
        graph = cls()
        for node in nodes:
            graph.nodes[node.id] = node
        chain = list(episode_chain)
        graph.episode_chain = chain
        graph._chain_keys = [parse_instant(graph.nodes[e].timestamp) for e in chain]
        for edge in edges:
            graph._register_edge(edge)
        graph.ingested_hashes = set(hashes)
        return graph
