"""Min-cost typed-path retrieval over the memory graph.

Anchors come from per-layer top-k vector search.  From every anchor we
instantiate eight path templates that end at an Episode (five climb the
BelongsTo hierarchy, three cross one temporal/causal/evolution edge first),
cost each hop with the query-conditioned edge cost plus a hop penalty, and
score every Episode by its cheapest path.  The lowest-scoring Episodes form
the bundle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import kernels
from .checkpoint import edge_store_name
from .config import RunConfig
from .graph import Edge, EdgeKind, LayerKind, MemoryGraph
from .routing import IntentLabel
from .vectors import EDGE_RELATION, EDGE_SEMANTIC, VectorStores, row_dots

BRIDGE_KINDS = (EdgeKind.TEMPORAL, EdgeKind.CAUSAL, EdgeKind.EVOLUTION)
ANCHOR_LAYERS = (LayerKind.EPISODE, LayerKind.FACET, LayerKind.FACET_POINT, LayerKind.ENTITY)
_LAYER_CODE = {LayerKind.ENTITY: 0, LayerKind.FACET_POINT: 1, LayerKind.FACET: 2, LayerKind.EPISODE: 3}
_KINDS = tuple(EdgeKind)
_KIND_CODE = {k: i for i, k in enumerate(_KINDS)}
MAX_HOPS = 4


@dataclass(frozen=True)
class PathTemplate:
    id: str
    family: str
    sequence: str


TEMPLATES = (
    PathTemplate("Ep", "backbone", "Ep"),
    PathTemplate("Fc-Ep", "backbone", "Fc -> Ep"),
    PathTemplate("FP-Fc-Ep", "backbone", "FP -> Fc -> Ep"),
    PathTemplate("En-FP-Fc-Ep", "backbone", "En -> FP -> Fc -> Ep"),
    PathTemplate("En-Fc-Ep", "backbone", "En -> Fc -> Ep"),
    PathTemplate("temporal-bridge", "relation_bridge", "a --temporal--> v -> Ep"),
    PathTemplate("causal-bridge", "relation_bridge", "a --causal--> v -> Ep"),
    PathTemplate("evolution-bridge", "relation_bridge", "a --evolution--> v -> Ep"),
)
_BRIDGE_TEMPLATE = {
    EdgeKind.TEMPORAL: "temporal-bridge",
    EdgeKind.CAUSAL: "causal-bridge",
    EdgeKind.EVOLUTION: "evolution-bridge",
}


@dataclass(frozen=True)
class Anchor:
    node_id: str
    layer: LayerKind
    similarity: float

    @property
    def cost(self) -> float:
        return 1.0 - self.similarity


def discover_anchors(
    graph: MemoryGraph, stores: VectorStores, query: np.ndarray, k: int = 30
) -> list[Anchor]:
    """Union of per-layer top-``k`` hits (Episode, Facet, FacetPoint, Entity order)."""
    best: dict[str, Anchor] = {}
    for layer in ANCHOR_LAYERS:
        for hit in stores.for_layer(layer).top_k(query, k):
            if hit.owner not in graph.nodes:
                continue
            prev = best.get(hit.owner)
            if prev is None or hit.similarity > prev.similarity:
                best[hit.owner] = Anchor(hit.owner, graph.nodes[hit.owner].layer, hit.similarity)
    return list(best.values())


# --------------------------------------------------------------------------
# edge costs


@dataclass
class EdgeCostModel:
    intents: frozenset = frozenset()
    recall: frozenset = frozenset()
    fallback: dict = field(default_factory=dict)
    discount_matched: float = 0.5
    discount_evolution_temporal: float = 0.7
    discounts_enabled: bool = True

    @classmethod
    def from_config(
        cls, config: RunConfig, intents: Iterable, recall: Iterable[str] = ()
    ) -> "EdgeCostModel":
        return cls(
            intents=frozenset(IntentLabel(i) for i in intents),
            recall=frozenset(recall),
            fallback={EdgeKind(k): v for k, v in config.fallback_costs.items()},
            discount_matched=config.discount_matched,
            discount_evolution_temporal=config.discount_evolution_temporal,
            discounts_enabled=config.enable_edge_costs,
        )

    def alpha(self, kind: EdgeKind) -> float:
        if not self.discounts_enabled:
            return 1.0
        if kind is EdgeKind.TEMPORAL and IntentLabel.TEMPORAL in self.intents:
            return self.discount_matched
        if kind is EdgeKind.CAUSAL and IntentLabel.CAUSAL in self.intents:
            return self.discount_matched
        if kind is EdgeKind.EVOLUTION and IntentLabel.TEMPORAL in self.intents:
            return self.discount_evolution_temporal
        return 1.0

    def fallback_cost(self, kind: EdgeKind) -> float:
        return self.fallback.get(kind, 0.02 if kind is EdgeKind.BELONGS_TO else 0.90)


def edge_vector(stores: VectorStores, edge: Edge) -> Optional[np.ndarray]:
    if edge.embedding_ref is None or edge.kind is EdgeKind.BELONGS_TO:
        return None
    return stores[edge_store_name(edge.kind)].vector(edge.embedding_ref)


def edge_cost(
    model: EdgeCostModel,
    edge: Edge,
    query: np.ndarray,
    vector: Optional[np.ndarray] = None,
) -> float:
    """Discounted traversal cost of one edge.

    ``1 - cos(edge, query)`` when the edge touches an anchor and has an
    embedding, otherwise the per-kind fallback; times the intent discount.
    """
    if edge.id in model.recall and vector is not None and edge.kind is not EdgeKind.BELONGS_TO:
        cos = float(row_dots(vector, query)[0])
        base = max(0.0, 1.0 - cos)
    else:
        base = model.fallback_cost(edge.kind)
    return model.alpha(edge.kind) * base


# --------------------------------------------------------------------------
# compiled adjacency for the search kernel


class CompiledGraph:
    """Integer CSR view of a graph snapshot."""

    def __init__(self, graph: MemoryGraph):
        self.stamp = (len(graph.nodes), len(graph.edges))
        self.node_ids = list(graph.nodes)
        index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.index = index
        n = len(self.node_ids)
        self.layer = np.array(
            [_LAYER_CODE[graph.nodes[nid].layer] for nid in self.node_ids], dtype=np.int8
        )
        self.edge_ids = list(graph.edges)
        edges = [graph.edges[eid] for eid in self.edge_ids]
        self.edge_index = {eid: i for i, eid in enumerate(self.edge_ids)}
        self.kind = np.array([_KIND_CODE[e.kind] for e in edges], dtype=np.int64)
        self.src = np.array([index[e.src] for e in edges], dtype=np.int64)
        self.dst = np.array([index[e.dst] for e in edges], dtype=np.int64)
        self.emb_row = np.array(
            [-1 if e.embedding_ref is None or e.kind is EdgeKind.BELONGS_TO else e.embedding_ref for e in edges],
            dtype=np.int64,
        )
        self.semantic = self.kind == _KIND_CODE[EdgeKind.SEMANTIC]

        up: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        rel: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        bridge_codes = {_KIND_CODE[k] for k in BRIDGE_KINDS}
        belongs = _KIND_CODE[EdgeKind.BELONGS_TO]
        for ei, e in enumerate(edges):
            s, d, k = int(self.src[ei]), int(self.dst[ei]), int(self.kind[ei])
            if k == belongs:
                up[s].append((ei, d))
            elif k in bridge_codes and s != d:
                rel[s].append((ei, d))
                rel[d].append((ei, s))
        self.up_ptr, self.up_edge, self.up_dst = _csr(up)
        self.rel_ptr, self.rel_edge, self.rel_other = _csr(rel)


def _csr(lists: list[list[tuple[int, int]]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists]) if lists else []
    flat = [pair for row in lists for pair in sorted(row)]
    edge = np.array([p[0] for p in flat], dtype=np.int64)
    other = np.array([p[1] for p in flat], dtype=np.int64)
    return ptr, edge, other


def compile_graph(graph: MemoryGraph) -> CompiledGraph:
    cached = getattr(graph, "_compiled", None)
    if cached is not None and cached.stamp == (len(graph.nodes), len(graph.edges)):
        return cached
    compiled = CompiledGraph(graph)
    graph._compiled = compiled
    return compiled


def edge_cost_array(
    cg: CompiledGraph, model: EdgeCostModel, stores: VectorStores, query: np.ndarray
) -> np.ndarray:
    """Vectorized :func:`edge_cost` over every edge of the compiled graph."""
    m = len(cg.edge_ids)
    if m == 0:
        return np.zeros(0)
    q = np.asarray(query, dtype=np.float64)
    fallback = np.array([model.fallback_cost(k) for k in _KINDS])
    alpha = np.array([model.alpha(k) for k in _KINDS])
    base = fallback[cg.kind]
    in_recall = np.array([eid in model.recall for eid in cg.edge_ids], dtype=bool) & (cg.emb_row >= 0)
    if in_recall.any():
        sims = np.zeros(m)
        for name, mask in ((EDGE_RELATION, ~cg.semantic), (EDGE_SEMANTIC, cg.semantic)):
            pick = in_recall & mask
            if pick.any():
                sims[pick] = row_dots(stores[name].rows[cg.emb_row[pick]], q)
        base = np.where(in_recall, np.maximum(0.0, 1.0 - sims), base)
    return alpha[cg.kind] * base


def recall_set(graph: MemoryGraph, anchors: Sequence[Anchor]) -> frozenset:
    """Ids of edges with at least one endpoint among the anchors."""
    cg = compile_graph(graph)
    if not cg.edge_ids:
        return frozenset()
    is_anchor = np.zeros(len(cg.node_ids), dtype=bool)
    is_anchor[[cg.index[a.node_id] for a in anchors]] = True
    hit = is_anchor[cg.src] | is_anchor[cg.dst]
    return frozenset(cg.edge_ids[i] for i in np.flatnonzero(hit))


# --------------------------------------------------------------------------
# paths and bundles


@dataclass
class PathInstance:
    anchor: Anchor
    hops: list[tuple[str, str]]
    hop_costs: list[tuple[float, float]]
    total_cost: float
    template: str

    @property
    def episode(self) -> str:
        return self.hops[-1][1] if self.hops else self.anchor.node_id

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor.node_id,
            "anchor_layer": self.anchor.layer.value,
            "anchor_cost": self.anchor.cost,
            "template": self.template,
            "nodes": [self.anchor.node_id] + [n for _, n in self.hops],
            "edges": [e for e, _ in self.hops],
            "hop_costs": [list(c) for c in self.hop_costs],
            "total_cost": self.total_cost,
        }


def _template_for(graph: MemoryGraph, anchor: Anchor, edge_ids: Sequence[str]) -> str:
    if not edge_ids:
        return "Ep"
    first = graph.edges[edge_ids[0]]
    if first.kind in _BRIDGE_TEMPLATE:
        return _BRIDGE_TEMPLATE[first.kind]
    return {
        LayerKind.FACET: "Fc-Ep",
        LayerKind.FACET_POINT: "FP-Fc-Ep",
        LayerKind.ENTITY: "En-FP-Fc-Ep" if len(edge_ids) == 3 else "En-Fc-Ep",
    }[anchor.layer]


def _make_path(
    graph: MemoryGraph,
    anchor: Anchor,
    edge_ids: Sequence[str],
    costs: Sequence[float],
    c_hop: float,
) -> PathInstance:
    current = anchor.node_id
    hops = []
    total = anchor.cost
    for eid, c in zip(edge_ids, costs):
        edge = graph.edges[eid]
        current = edge.dst if edge.src == current else edge.src
        hops.append((eid, current))
        total = total + (c + c_hop)
    return PathInstance(
        anchor, hops, [(c, c_hop) for c in costs], total, _template_for(graph, anchor, edge_ids)
    )


def enumerate_paths(
    graph: MemoryGraph,
    anchors: Sequence[Anchor],
    cost_of,
    c_hop: float = 0.05,
    bridges: bool = True,
) -> Iterator[PathInstance]:
    """Every template instance from every anchor.

    ``cost_of(edge)`` gives the discounted edge cost.  Order matches the
    compiled kernel: anchors as given, backbone before bridges, edges in
    insertion order.
    """

    def climb(node_id: str, trail: list[str]) -> Iterator[list[str]]:
        if graph.nodes[node_id].layer is LayerKind.EPISODE:
            yield list(trail)
            return
        if len(trail) == MAX_HOPS:
            return
        for edge, parent in graph.neighbors(node_id, EdgeKind.BELONGS_TO, "out"):
            trail.append(edge.id)
            yield from climb(parent.id, trail)
            trail.pop()

    for anchor in anchors:
        starts = [(anchor.node_id, [])]
        if bridges:
            crossings = []
            for kind in BRIDGE_KINDS:
                for edge, other in graph.neighbors(anchor.node_id, kind, "both"):
                    if edge.src != edge.dst:
                        crossings.append((graph.edge_order(edge.id), edge.id, other.id))
            crossings.sort()
            starts += [(other, [eid]) for _, eid, other in crossings]
        for start, trail in starts:
            for edge_ids in climb(start, trail):
                costs = [cost_of(graph.edges[e]) for e in edge_ids]
                yield _make_path(graph, anchor, edge_ids, costs, c_hop)


@dataclass
class BundleEntry:
    episode_id: str
    score: float
    path: PathInstance


@dataclass
class Bundle:
    entries: list[BundleEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def episode_ids(self) -> list[str]:
        return [e.episode_id for e in self.entries]

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self.entries]


def assemble_bundle(
    paths: Iterable[PathInstance], k: int = 10, chain_position: Optional[dict[str, int]] = None
) -> Bundle:
    """Per-episode minimum cost, ascending, top ``k``.

    Ties go to the earlier episode in the chronological chain, then the
    smaller id.  Among equal-cost paths to one episode the first seen wins.
    """
    best: dict[str, PathInstance] = {}
    for path in paths:
        cur = best.get(path.episode)
        if cur is None or path.total_cost < cur.total_cost:
            best[path.episode] = path
    pos = chain_position or {}
    order = sorted(best, key=lambda ep: (best[ep].total_cost, pos.get(ep, math.inf), ep))
    return Bundle([BundleEntry(ep, best[ep].total_cost, best[ep]) for ep in order[:k]])


@dataclass
class RetrievalResult:
    bundle: Bundle
    anchors: list[Anchor]
    recall_size: int
    paths_enumerated: int
    intents: frozenset

    def trace(self) -> dict:
        return {
            "anchors": [
                {"node": a.node_id, "layer": a.layer.value, "cost": a.cost} for a in self.anchors
            ],
            "recall_size": self.recall_size,
            "paths_enumerated": self.paths_enumerated,
            "intents": sorted(i.value for i in self.intents),
            "bundle": [
                {"episode": e.episode_id, "score": e.score, "path": e.path.to_dict()}
                for e in self.bundle
            ],
        }


def retrieve(
    graph: MemoryGraph,
    stores: VectorStores,
    query: np.ndarray,
    intents: Iterable = (),
    config: Optional[RunConfig] = None,
) -> RetrievalResult:
    """Anchors -> recall set -> compiled path search -> bundle."""
    config = config or RunConfig()
    intents = frozenset(IntentLabel(i) for i in intents)
    anchors = discover_anchors(graph, stores, query, config.anchor_k)
    if not anchors:
        return RetrievalResult(Bundle(), [], 0, 0, intents)
    recall = recall_set(graph, anchors)
    model = EdgeCostModel.from_config(config, intents, recall)
    cg = compile_graph(graph)
    costs = edge_cost_array(cg, model, stores, query)
    anchor_idx = np.array([cg.index[a.node_id] for a in anchors], dtype=np.int64)
    anchor_cost = np.array([a.cost for a in anchors], dtype=np.float64)
    best, best_anchor, best_edges, best_hops, count = kernels.search_paths(
        cg.layer,
        cg.up_ptr,
        cg.up_edge,
        cg.up_dst,
        cg.rel_ptr,
        cg.rel_edge,
        cg.rel_other,
        costs,
        anchor_idx,
        anchor_cost,
        float(config.hop_penalty),
        bool(config.enable_bridges),
    )
    reached = np.flatnonzero(np.isfinite(best))
    pos = graph.chain_position()
    order = sorted(
        reached.tolist(),
        key=lambda i: (best[i], pos.get(cg.node_ids[i], math.inf), cg.node_ids[i]),
    )[: config.bundle_size]
    entries = []
    for i in order:
        anchor = anchors[int(best_anchor[i])]
        hop_edges = [int(x) for x in best_edges[i, : best_hops[i]]]
        path = _make_path(
            graph,
            anchor,
            [cg.edge_ids[e] for e in hop_edges],
            [float(costs[e]) for e in hop_edges],
            float(config.hop_penalty),
        )
        entries.append(BundleEntry(cg.node_ids[i], float(best[i]), path))
    return RetrievalResult(Bundle(entries), anchors, len(recall), int(count), intents)
