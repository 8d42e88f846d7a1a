import itertools
import json
import math

import numpy as np
import pytest

from conftest import GraphBuilder, unit
from oracles import brute_anchors, brute_bundle, hand_edge_cost
from scenarios import Q, bridge_only_graph
from typedmem.config import RunConfig
from typedmem.graph import Edge, EdgeKind, LayerKind
from typedmem.retrieval import (
    TEMPLATES,
    Anchor,
    EdgeCostModel,
    PathInstance,
    assemble_bundle,
    discover_anchors,
    edge_cost,
    enumerate_paths,
    retrieve,
)
from typedmem.routing import IntentLabel as L
from typedmem.synthetic import random_checkpoint, random_query

CFG = RunConfig()


def model(intents=(), recall=(), **kw):
    return EdgeCostModel.from_config(CFG.with_flags(**kw), intents, recall)


def test_templates():
    assert len(TEMPLATES) == 8
    assert sum(t.family == "backbone" for t in TEMPLATES) == 5
    assert all(t.sequence.endswith("Ep") for t in TEMPLATES)


# -- edge cost ------------------------------------------------------------


def test_edge_cost_examples():
    q = unit(1.0)
    v = unit(0.8, 0.6)
    t = Edge(EdgeKind.TEMPORAL, "a", "b", id="t")
    assert edge_cost(model([L.TEMPORAL], {"t"}), t, q, v) == pytest.approx(0.10, abs=1e-12)
    c = Edge(EdgeKind.CAUSAL, "a", "b", id="c", confidence=0.9)
    assert edge_cost(model(), c, q, v) == pytest.approx(0.90, abs=1e-12)
    e = Edge(EdgeKind.EVOLUTION, "a", "b", id="e")
    assert edge_cost(model([L.TEMPORAL]), e, q, v) == pytest.approx(0.63, abs=1e-12)


@pytest.mark.parametrize("kind", list(EdgeKind))
def test_edge_cost_against_hand_values(kind):
    q = unit(1.0)
    for r in range(5):
        for subset in itertools.combinations(list(L), r):
            m = model(subset, {"x"})
            names = {lab.value for lab in subset}
            for cos in (-1.0, 0.0, 0.5, 0.9, 1.0):
                v = unit(cos, math.sqrt(1 - cos * cos))
                got = edge_cost(m, Edge(kind, "a", "b", id="x", confidence=0.9), q, v)
                assert abs(got - hand_edge_cost(kind.value, names, cos)) <= 1e-12
            out = edge_cost(model(subset), Edge(kind, "a", "b", id="x", confidence=0.9), q, unit(1.0))
            assert abs(out - hand_edge_cost(kind.value, names)) <= 1e-12


def test_alpha_values_and_no_n2():
    for kind in EdgeKind:
        for r in range(5):
            for subset in itertools.combinations(list(L), r):
                assert model(subset).alpha(kind) in (0.5, 0.7, 1.0)
                assert model(subset, enable_edge_costs=False).alpha(kind) == 1.0


def test_in_recall_without_vector_uses_fallback():
    e = Edge(EdgeKind.TEMPORAL, "a", "b", id="t")
    assert edge_cost(model([L.TEMPORAL], {"t"}), e, unit(1.0)) == 0.45


# -- anchors --------------------------------------------------------------


def test_single_episode_anchor(builder):
    builder.node("ep", LayerKind.EPISODE, unit(1.0))
    [a] = discover_anchors(builder.graph, builder.stores, unit(1.0))
    assert a.node_id == "ep" and a.cost == 0.0


def test_empty_graph(builder):
    res = retrieve(builder.graph, builder.stores, unit(1.0))
    assert len(res.bundle) == 0 and res.anchors == []


def test_anchor_union_matches_brute_force():
    rng = np.random.default_rng(5)
    b = GraphBuilder(dim=16)
    for layer in LayerKind:
        for i in range(50):
            v = rng.standard_normal(16)
            kw = {"timestamp": f"2023-01-01T00:{i:02d}:00Z"} if layer is LayerKind.EPISODE else {}
            b.node(f"{layer.value}{i}", layer, v / np.linalg.norm(v), **kw)
    q = rng.standard_normal(16)
    q /= np.linalg.norm(q)
    anchors = discover_anchors(b.graph, b.stores, q, 30)
    assert len(anchors) == 120
    oracle = brute_anchors(b.graph, b.stores, q, 30)
    assert {a.node_id: a.cost for a in anchors} == pytest.approx(oracle, abs=1e-12)


# -- paths ----------------------------------------------------------------


def cost_fn(m, stores, q):
    from typedmem.retrieval import edge_vector

    return lambda e: edge_cost(m, e, q, edge_vector(stores, e))


def test_zero_and_one_hop_paths(builder):
    builder.node("ep", LayerKind.EPISODE, unit(1.0))
    builder.node("fc", LayerKind.FACET, unit(0.6, 0.8))
    builder.edge(EdgeKind.BELONGS_TO, "fc", "ep")
    anchors = [Anchor("ep", LayerKind.EPISODE, 1.0), Anchor("fc", LayerKind.FACET, 0.6)]
    for intents in ([], [L.TEMPORAL, L.CAUSAL]):
        m = model(intents)
        paths = list(enumerate_paths(builder.graph, anchors, cost_fn(m, builder.stores, unit(1.0))))
        assert [p.template for p in paths] == ["Ep", "Fc-Ep"]
        assert paths[0].total_cost == 0.0
        assert paths[1].total_cost == pytest.approx(0.4 + 0.02 + 0.05, abs=1e-12)


def test_bridge_instance_lands_in_other_episode():
    b, causal = bridge_only_graph()
    anchors = discover_anchors(b.graph, b.stores, Q, 1)
    paths = list(enumerate_paths(b.graph, anchors, cost_fn(model(), b.stores, Q)))
    bridge = [p for p in paths if p.template == "causal-bridge"]
    assert len(bridge) == 1 and bridge[0].episode == "ep2"
    assert bridge[0].hops[0][0] == causal and len(bridge[0].hops) == 3


def test_bridge_both_directions(builder):
    builder.node("ep1", LayerKind.EPISODE, unit(1.0))
    builder.node("ep2", LayerKind.EPISODE, unit(0, 1.0))
    builder.edge(EdgeKind.TEMPORAL, "ep2", "ep1")
    anchors = [Anchor("ep1", LayerKind.EPISODE, 1.0)]
    paths = list(enumerate_paths(builder.graph, anchors, lambda e: 0.9))
    assert [p.episode for p in paths] == ["ep1", "ep2"]
    assert paths[1].total_cost == pytest.approx(0.95)


def test_involves_entity_not_traversed(builder):
    builder.node("ep", LayerKind.EPISODE, unit(0, 1.0))
    builder.node("fc", LayerKind.FACET, unit(0, 0, 1.0))
    builder.node("fp", LayerKind.FACET_POINT, unit(0, 0, 0, 1.0))
    builder.node("en", LayerKind.ENTITY, unit(1.0))
    builder.edge(EdgeKind.BELONGS_TO, "fc", "ep")
    builder.edge(EdgeKind.BELONGS_TO, "fp", "fc")
    builder.edge(EdgeKind.INVOLVES_ENTITY, "fp", "en")
    anchors = [Anchor("en", LayerKind.ENTITY, 1.0)]
    assert list(enumerate_paths(builder.graph, anchors, lambda e: 0.1)) == []


def test_entity_backbones(builder):
    builder.node("ep", LayerKind.EPISODE, unit(0, 1.0))
    builder.node("fc", LayerKind.FACET, unit(0, 0, 1.0))
    builder.node("fp", LayerKind.FACET_POINT, unit(0, 0, 0, 1.0))
    builder.node("en", LayerKind.ENTITY, unit(1.0))
    builder.edge(EdgeKind.BELONGS_TO, "fc", "ep")
    builder.edge(EdgeKind.BELONGS_TO, "fp", "fc")
    builder.edge(EdgeKind.BELONGS_TO, "en", "fp")
    builder.edge(EdgeKind.BELONGS_TO, "en", "fc")
    anchors = [Anchor("en", LayerKind.ENTITY, 1.0)]
    paths = list(enumerate_paths(builder.graph, anchors, lambda e: 0.02))
    assert sorted(p.template for p in paths) == ["En-FP-Fc-Ep", "En-Fc-Ep"]
    bundle = assemble_bundle(paths)
    assert bundle.entries[0].path.template == "En-Fc-Ep"
    assert bundle.scores[0] == pytest.approx(2 * 0.07)


# -- bundles --------------------------------------------------------------


def fake_path(ep, cost):
    return PathInstance(Anchor(ep, LayerKind.EPISODE, 1.0 - cost), [], [], cost, "Ep")


def test_assemble_min_and_truncate():
    assert assemble_bundle([]).entries == []
    [one] = assemble_bundle([fake_path("a", 0.3)])
    assert one.score == 0.3
    bundle = assemble_bundle([fake_path("a", 0.7), fake_path("a", 0.4)])
    assert bundle.scores == [0.4] and bundle.entries[0].path.total_cost == 0.4
    paths = [fake_path(f"e{i:02d}", (i * 7 % 15) / 10) for i in range(15)]
    bundle = assemble_bundle(paths, 10)
    assert len(bundle) == 10
    assert bundle.scores == sorted((i * 7 % 15) / 10 for i in range(15))[:10]


def test_assemble_tie_order():
    paths = [fake_path("b", 0.5), fake_path("a", 0.5), fake_path("c", 0.5)]
    assert assemble_bundle(paths).episode_ids == ["a", "b", "c"]
    assert assemble_bundle(paths, chain_position={"c": 0, "b": 1, "a": 2}).episode_ids == ["c", "b", "a"]


# -- retrieve -------------------------------------------------------------


def test_bridge_only_episode(backend):
    b, _ = bridge_only_graph()
    cfg = CFG.with_flags(anchor_k=1)
    full = retrieve(b.graph, b.stores, Q, (), cfg)
    assert full.bundle.episode_ids == ["ep1", "ep2"]
    assert full.bundle.entries[1].path.template == "causal-bridge"
    off = retrieve(b.graph, b.stores, Q, (), cfg.with_flags(enable_bridges=False))
    assert off.bundle.episode_ids == ["ep1"]


def test_no_n2_equals_general(backend):
    ckpt = random_checkpoint(9, 80)
    q = random_query(9, ckpt)
    a = retrieve(ckpt.graph, ckpt.stores, q, [L.TEMPORAL, L.CAUSAL], CFG.with_flags(enable_edge_costs=False))
    b = retrieve(ckpt.graph, ckpt.stores, q, [L.GENERAL], CFG)
    assert a.bundle.episode_ids == b.bundle.episode_ids and a.bundle.scores == b.bundle.scores


def test_backbone_only_graph_no_n1_equal(backend):
    ckpt = random_checkpoint(4, 80, relation_rate=0.0)
    q = random_query(4, ckpt)
    a = retrieve(ckpt.graph, ckpt.stores, q, (), CFG)
    b = retrieve(ckpt.graph, ckpt.stores, q, (), CFG.with_flags(enable_bridges=False))
    assert a.bundle.episode_ids == b.bundle.episode_ids and a.bundle.scores == b.bundle.scores


@pytest.mark.parametrize("seed", range(40))
def test_oracle_equivalence(backend, seed):
    ckpt = random_checkpoint(seed, 20 + 4 * seed, palette=2 if seed % 4 == 0 else 0)
    q = random_query(seed, ckpt, palette_from_graph=seed % 4 == 0)
    intents = [[], [L.TEMPORAL], [L.CAUSAL], [L.TEMPORAL, L.CAUSAL]][seed % 4]
    cfg = CFG.with_flags(anchor_k=3 + seed % 7, enable_bridges=seed % 5 != 0)
    res = retrieve(ckpt.graph, ckpt.stores, q, intents, cfg)
    oracle = brute_bundle(ckpt.graph, ckpt.stores, q, intents, cfg.anchor_k, bridges=cfg.enable_bridges)
    assert res.bundle.episode_ids == [ep for ep, _ in oracle]
    assert np.allclose(res.bundle.scores, [s for _, s in oracle], rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_kernel_matches_pure_enumeration(seed):
    from typedmem.retrieval import recall_set

    ckpt = random_checkpoint(100 + seed, 60)
    q = random_query(seed, ckpt)
    g = ckpt.graph
    res = retrieve(g, ckpt.stores, q, [L.CAUSAL], CFG)
    anchors = discover_anchors(g, ckpt.stores, q, CFG.anchor_k)
    m = model([L.CAUSAL], recall_set(g, anchors))
    paths = list(enumerate_paths(g, anchors, cost_fn(m, ckpt.stores, q)))
    assert res.paths_enumerated == len(paths)
    bundle = assemble_bundle(paths, 10, g.chain_position())
    assert bundle.episode_ids == res.bundle.episode_ids
    assert [e.path.to_dict() for e in bundle] == [e.path.to_dict() for e in res.bundle]


@pytest.mark.parametrize("seed", range(20))
def test_properties(seed):
    ckpt = random_checkpoint(200 + seed, 70)
    q = random_query(seed, ckpt)
    g = ckpt.graph
    plain = retrieve(g, ckpt.stores, q, (), CFG.with_flags(bundle_size=1000))
    disc = retrieve(g, ckpt.stores, q, [L.TEMPORAL, L.CAUSAL], CFG.with_flags(bundle_size=1000))
    # intent isolation and monotone discount
    assert {a.node_id for a in plain.anchors} == {a.node_id for a in disc.anchors}
    assert plain.paths_enumerated == disc.paths_enumerated
    s_plain = dict(zip(plain.bundle.episode_ids, plain.bundle.scores))
    s_disc = dict(zip(disc.bundle.episode_ids, disc.bundle.scores))
    assert set(s_plain) == set(s_disc)
    for ep, s in s_disc.items():
        assert s <= s_plain[ep] + 1e-12
    for entry in plain.bundle:
        path = entry.path
        assert entry.score >= 0 and entry.score >= path.anchor.cost - 1e-12
        assert len(path.hops) <= 4
        recomputed = path.anchor.cost + sum(c + h for c, h in path.hop_costs)
        assert recomputed == pytest.approx(entry.score, abs=1e-12)
    assert plain.bundle.scores == sorted(plain.bundle.scores)
    k10 = retrieve(g, ckpt.stores, q, (), CFG)
    assert len(k10.bundle) == min(10, len(s_plain))


def test_trace_is_json(backend):
    b, _ = bridge_only_graph()
    res = retrieve(b.graph, b.stores, Q, [L.CAUSAL], CFG.with_flags(anchor_k=1))
    trace = json.loads(json.dumps(res.trace()))
    assert trace["intents"] == ["causal"]
    assert trace["recall_size"] == 3
    path = trace["bundle"][1]["path"]
    assert path["nodes"] == ["fp1", "fp2", "fc2", "ep2"]
    assert path["hop_costs"][0] == [0.5, 0.05]
