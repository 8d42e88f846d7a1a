"""Seeded synthetic graphs and conversations for tests, benchmarks and demos."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .checkpoint import Checkpoint, edge_store_name
from .evaluation import QueryRecord
from .extraction import chunks_from_conversation
from .graph import Edge, EdgeKind, LayerKind, MemoryGraph, Node
from .vectors import VectorStores

_RANDOM_RELATIONS = (
    EdgeKind.TEMPORAL,
    EdgeKind.CAUSAL,
    EdgeKind.EVOLUTION,
    EdgeKind.SEMANTIC,
    EdgeKind.INVOLVES_ENTITY,
)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_checkpoint(
    seed: int,
    n_nodes: int = 60,
    dim: int = 16,
    relation_rate: float = 0.8,
    palette: int = 0,
) -> Checkpoint:
    """Random layered graph with random unit embeddings.

    ``palette > 0`` draws every vector from that many shared directions, which
    produces many exactly tied anchor and edge costs.  Episode timestamps
    repeat on purpose so chain order also has to break ties.
    """
    rng = np.random.default_rng(seed)
    n_nodes = max(4, n_nodes)
    colors = [_unit(rng, dim) for _ in range(palette)]

    def vec() -> np.ndarray:
        return colors[rng.integers(palette)] if palette else _unit(rng, dim)

    n_ep = int(rng.integers(1, max(2, n_nodes // 5) + 1))
    n_fc = int(rng.integers(n_ep, max(n_ep + 1, n_nodes // 3) + 1))
    n_fp = int(rng.integers(1, max(2, n_nodes // 3) + 1))
    n_en = max(0, n_nodes - n_ep - n_fc - n_fp)

    graph = MemoryGraph()
    stores = VectorStores(dim, "synthetic")
    base = datetime(2023, 1, 1, tzinfo=timezone.utc)

    def add(node_id: str, layer: LayerKind, **kw) -> str:
        node = Node(node_id, layer, f"{layer.value} {node_id}", "syn", **kw)
        graph.add_node(node)
        node.embedding_ref = stores.for_layer(layer).add(node_id, vec())
        return node_id

    eps = [
        add(f"ep{i}", LayerKind.EPISODE, timestamp=(base + timedelta(days=int(rng.integers(0, max(1, n_ep // 2 + 1))))).isoformat())
        for i in range(n_ep)
    ]
    fcs = [add(f"fc{i}", LayerKind.FACET) for i in range(n_fc)]
    fps = [add(f"fp{i}", LayerKind.FACET_POINT) for i in range(n_fp)]
    ens = [add(f"en{i}", LayerKind.ENTITY, entity_type="person") for i in range(n_en)]

    def link(kind: EdgeKind, src: str, dst: str) -> None:
        if src == dst or graph.has_edge(kind, src, dst):
            return
        conf = float(rng.uniform(0.7, 1.0)) if kind is EdgeKind.CAUSAL else None
        edge = Edge(kind, src, dst, confidence=conf)
        graph.add_edge(edge)
        if kind is not EdgeKind.BELONGS_TO:
            edge.embedding_ref = stores[edge_store_name(kind)].add(edge.id, vec())

    for fc in fcs:
        link(EdgeKind.BELONGS_TO, fc, eps[rng.integers(n_ep)])
    for fp in fps:
        link(EdgeKind.BELONGS_TO, fp, fcs[rng.integers(n_fc)])
    for en in ens:
        for _ in range(int(rng.integers(0, 4))):
            link(EdgeKind.BELONGS_TO, en, fps[rng.integers(n_fp)])
        if rng.random() < 0.3:
            link(EdgeKind.BELONGS_TO, en, fcs[rng.integers(n_fc)])
    everyone = list(graph.nodes)
    for _ in range(int(relation_rate * n_nodes)):
        kind = _RANDOM_RELATIONS[rng.integers(len(_RANDOM_RELATIONS))]
        src, dst = (everyone[i] for i in rng.integers(len(everyone), size=2))
        link(kind, src, dst)
    return Checkpoint(graph, stores)


def random_query(seed: int, ckpt: Checkpoint, palette_from_graph: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if palette_from_graph:
        rows = ckpt.stores["episode"].rows
        return rows[rng.integers(len(rows))].astype(np.float64)
    return _unit(rng, ckpt.stores.dim)


# --------------------------------------------------------------------------
# synthetic conversation with pre-extracted records and a QA set

_NAMES = ("Melanie", "Caroline", "Jon", "Gina", "Audrey", "Andrew", "Nate", "Joanna", "Tim", "Maria")
_ACTIVITIES = (
    ("started violin lessons", "music"),
    ("ran a charity race", "running"),
    ("adopted a grey kitten", "pets"),
    ("painted a sunset mural", "painting"),
    ("planted tomatoes and basil", "gardening"),
    ("joined a pottery class", "pottery"),
    ("read a novel about sailors", "reading"),
    ("baked sourdough bread", "baking"),
    ("camped beside a quiet lake", "camping"),
    ("learned to ride a tandem bicycle", "cycling"),
    ("volunteered at an animal shelter", "volunteering"),
    ("built a wooden bookshelf", "woodwork"),
    ("visited an art museum", "art"),
    ("practised chess openings", "chess"),
    ("wrote a short poem", "writing"),
    ("signed up for salsa dancing", "dancing"),
    ("hiked a coastal trail", "hiking"),
    ("cooked a spicy curry", "cooking"),
    ("photographed migrating birds", "photography"),
    ("knitted a striped scarf", "knitting"),
)
_PLACES = (
    "community hall", "riverside park", "old library", "harbour market", "city museum",
    "mountain cabin", "central station", "botanical garden", "north beach", "town square",
)


@dataclass
class SyntheticSet:
    conversation: dict
    extractions: dict
    records: list


def synthetic_conversation(
    seed: int = 0, n_sessions: int = 20, n_queries: int = 50, bridge_free: bool = True
) -> SyntheticSet:
    """One conversation, one session per chunk, plus pre-extracted records and QA.

    With ``bridge_free`` the records carry no entity links or timestamps on
    facet points, so ingestion (with the episode chain link disabled and no
    causal client) writes no relation edges a bridge template could cross.
    """
    rng = np.random.default_rng(seed)
    start = datetime(2023, 3, 1, 10, 0, tzinfo=timezone.utc)
    sessions, facts = [], []
    for i in range(n_sessions):
        a, b = _NAMES[i % len(_NAMES)], _NAMES[(i + 3) % len(_NAMES)]
        act, topic = _ACTIVITIES[(i * 7 + int(rng.integers(3))) % len(_ACTIVITIES)]
        place, place2 = _PLACES[i % len(_PLACES)], _PLACES[(i * 3 + 1) % len(_PLACES)]
        moment = start + timedelta(days=9 * i, hours=int(rng.integers(0, 8)))
        turns = [
            {"speaker": a, "text": f"I {act} at the {place}.", "dia_id": f"D{i + 1}:1"},
            {"speaker": b, "text": f"Lovely. I spent the day at the {place2} with my cousin.", "dia_id": f"D{i + 1}:2"},
        ]
        sessions.append({"timestamp": moment.isoformat(), "turns": turns})
        facts.append((a, b, act, topic, place, place2, moment))
    conversation = {"conversation_id": f"syn{seed}", "sessions": sessions}

    extractions = {}
    chunks = chunks_from_conversation(conversation)
    for chunk, (a, b, act, topic, place, place2, moment) in zip(chunks, facts):
        points = [
            {"content": f"{a} {act} at the {place}", "related_entity_name": a, "timestamp_text": moment.date().isoformat()},
            {"content": f"{b} spent the day at the {place2} with a cousin", "related_entity_name": b, "timestamp_text": None},
        ]
        if bridge_free:
            for p in points:
                p["related_entity_name"] = None
                p["timestamp_text"] = None
        extractions[chunk.content_hash] = {
            "episode_summary": f"{a} {act} at the {place}; {b} spent the day at the {place2}.",
            "entities": [
                {"name": a, "entity_type": "person"},
                {"name": b, "entity_type": "person"},
                {"name": place, "entity_type": "place"},
            ],
            "facet_points": points,
            "facets": [{"theme": topic, "facet_point_indices": [0]}, {"theme": "outings", "facet_point_indices": [1]}],
            "temporal_info": [],
        }

    templates = (
        ("temporal", "When did {a} say they {act}?", "{place}", 1),
        ("open_domain", "Why did {a} go to the {place}?", "{act}", 1),
        ("single_hop", "Where did {a} go when they {act}?", "{place}", 1),
        ("multi_hop", "How does {a}'s interest in {topic} relate to {b}'s visit to the {place2}?", "{topic}", 2),
        ("open_domain", "What might {b} enjoy doing at the {place2}?", "{place2}", 2),
    )
    records = []
    for j in range(n_queries):
        i = int(rng.integers(n_sessions))
        a, b, act, topic, place, place2, _ = facts[i]
        category, question, gold, n_ev = templates[j % len(templates)]
        slots = dict(a=a, b=b, act=act, topic=topic, place=place, place2=place2)
        evidence = [f"D{i + 1}:1"] + ([f"D{i + 1}:2"] if n_ev > 1 else [])
        records.append(
            QueryRecord(
                question=question.format(**slots),
                gold_answer=gold.format(**slots),
                category=category,
                evidence=tuple(evidence),
                conversation_id=conversation["conversation_id"],
                qid=f"q{j:03d}",
            )
        )
    return SyntheticSet(conversation, extractions, records)
