import json
import time

import numpy as np
import pytest

from typedmem.checkpoint import load_checkpoint, save_checkpoint
from typedmem.config import IngestConfig
from typedmem.extraction import FileExtractor, LLMExtractor, RawChunk, chunks_from_conversation
from typedmem.graph import EdgeKind, LayerKind
from typedmem.ingestion import Ingestor, ingest_conversation
from typedmem.llm import FailingChatClient, StubChatClient
from typedmem.synthetic import synthetic_conversation
from typedmem.vectors import HashEmbedder, normalize


def setup(n=12, bridge_free=False):
    syn = synthetic_conversation(seed=1, n_sessions=n, n_queries=5, bridge_free=bridge_free)
    return chunks_from_conversation(syn.conversation), FileExtractor(syn.extractions)


def canonical(ckpt):
    g = ckpt.graph
    return (
        sorted(json.dumps(n.to_dict(), sort_keys=True) for n in g.nodes.values()),
        sorted((e.kind.value, e.src, e.dst, e.confidence) for e in g.edges.values()),
        list(g.episode_chain),
    )


class CausalScript:
    """Scripted causal backend: links the last two events with a fixed confidence."""

    def __init__(self, confidence=0.8, extra=()):
        self.calls = 0
        self.confidence = confidence
        self.extra = list(extra)

    def __call__(self, user, system=None):
        self.calls += 1
        ids = [line.split("]")[0].split("[")[1] for line in user.splitlines() if line.startswith("- [")]
        pairs = list(self.extra)
        if len(ids) >= 2:
            pairs.append({"cause_id": ids[-2], "effect_id": ids[-1], "description": "d", "confidence": self.confidence})
        return json.dumps({"causal_pairs": pairs})


def test_layers_and_backbone():
    chunks, ext = setup(4)
    ckpt, report = ingest_conversation(chunks, ext)
    g = ckpt.graph
    assert report.fresh == 4 and report.failed == 0
    assert len(g.episode_chain) == 4
    for node in g.nodes.values():
        if node.layer in (LayerKind.FACET, LayerKind.FACET_POINT):
            assert g.episode_of(node.id) in g.episode_chain
    kinds = {e.kind for e in g.edges.values()}
    assert {EdgeKind.BELONGS_TO, EdgeKind.TEMPORAL, EdgeKind.INVOLVES_ENTITY} <= kinds
    # every stored vector is unit norm
    for store in ckpt.stores:
        if len(store):
            norms = np.linalg.norm(store.rows.astype(np.float64), axis=1)
            assert np.all(np.abs(norms - 1) <= 1e-6)


def test_chain_edges_follow_episode_order():
    chunks, ext = setup(5)
    ckpt, _ = ingest_conversation(chunks, ext)
    g = ckpt.graph
    chain = list(g.episode_chain)
    for a, b in zip(chain, chain[1:]):
        assert g.has_edge(EdgeKind.TEMPORAL, a, b)
    ckpt2, _ = ingest_conversation(chunks, ext, config=IngestConfig(link_episode_chain=False))
    assert not any(
        ckpt2.graph.has_edge(EdgeKind.TEMPORAL, a, b)
        for a, b in zip(ckpt2.graph.episode_chain, ckpt2.graph.episode_chain[1:])
    )


def test_idempotent_double_ingest():
    chunks, ext = setup(8)
    ing = Ingestor()
    ing.ingest_conversation(chunks, ext, StubChatClient("scripted", script=CausalScript()))
    before = canonical(ing.ckpt)
    report = ing.ingest_conversation(chunks, ext, StubChatClient("scripted", script=CausalScript()))
    assert report.duplicate == 8
    assert canonical(ing.ckpt) == before
    # an independent build from the same stream is the same graph
    other = Ingestor()
    other.ingest_conversation(chunks, ext, StubChatClient("scripted", script=CausalScript()))
    assert canonical(other.ckpt) == before


def test_resume_from_checkpoint(tmp_path):
    chunks, ext = setup(6)
    full, _ = ingest_conversation(chunks, ext)
    first, _ = ingest_conversation(chunks[:3], ext, out=tmp_path / "c")
    ing = Ingestor(checkpoint=load_checkpoint(tmp_path / "c"))
    report = ing.ingest_conversation(chunks, ext)
    assert report.duplicate == 3 and report.fresh == 3
    assert canonical(ing.ckpt) == canonical(full)


@pytest.mark.parametrize("n,passes", [(4, 1), (5, 1), (10, 2), (12, 3)])
def test_causal_trigger_count(n, passes):
    chunks, ext = setup(n)
    script = CausalScript()
    _, report = ingest_conversation(chunks, ext, StubChatClient("scripted", script=script))
    assert script.calls == passes == report.causal_passes


def test_causal_failure_stays_pending():
    chunks, ext = setup(7)
    _, report = ingest_conversation(chunks, ext, FailingChatClient())
    # trigger at 5 fails, the final flush retries the still-pending window
    assert report.causal_passes == 2 and report.causal_failures == 2
    assert report.fresh == 7


@pytest.mark.parametrize("conf,kept", [(0.69, False), (0.6999999, False), (0.7, True), (0.95, True), (1.2, False)])
def test_causal_confidence_floor(conf, kept):
    chunks, ext = setup(2)
    ckpt, report = ingest_conversation(chunks, ext, StubChatClient("scripted", script=CausalScript(conf)))
    causal = [e for e in ckpt.graph.edges.values() if e.kind is EdgeKind.CAUSAL]
    assert bool(causal) is kept
    assert all(e.confidence >= 0.7 for e in causal)
    assert report.causal_dropped == (0 if kept else 1)


def test_causal_rejects_bad_pairs():
    chunks, ext = setup(3)
    bad = [
        {"cause_id": "nope", "effect_id": "nope2", "confidence": 0.9},
        {"cause_id": 1, "effect_id": 2, "confidence": 0.9},
        {"cause_id": "x", "effect_id": "y", "confidence": "high"},
        "not an object",
    ]
    ckpt, report = ingest_conversation(
        chunks, ext, StubChatClient("scripted", script=CausalScript(extra=bad))
    )
    assert report.causal_accepted == 1 and report.causal_dropped == 4
    [edge] = [e for e in ckpt.graph.edges.values() if e.kind is EdgeKind.CAUSAL]
    assert ckpt.graph.nodes[edge.src].layer is LayerKind.EPISODE
    assert edge.embedding_ref is not None


def test_causal_empty_reply_and_duplicates():
    chunks, ext = setup(2)
    ckpt, report = ingest_conversation(
        chunks, ext, StubChatClient("scripted", default='{"causal_pairs": []}')
    )
    assert report.causal_passes == 1 and report.causal_accepted == 0
    ing = Ingestor()
    ing.ingest_conversation(chunks, ext)
    script = CausalScript()
    client = StubChatClient("scripted", script=script)
    ing.consolidate_causal(client)
    ing.consolidate_causal(client)
    causal = [e for e in ing.graph.edges.values() if e.kind is EdgeKind.CAUSAL]
    assert len(causal) == 1 and ing.report.causal_dropped == 1


def test_merge_entity_threshold():
    ing = Ingestor(HashEmbedder(8))
    base = normalize(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]))

    def at(cos):
        return normalize(np.array([cos, np.sqrt(1 - cos * cos), 0, 0, 0, 0, 0, 0]))

    first = ing.merge_entity("Melanie", "person", "c", base)
    assert ing.merge_entity("Mel", "person", "c", at(0.95)) == first
    assert ing.merge_entity("MELANIE ", "person", "c") == first
    assert ing.merge_entity("Melody", "person", "c", at(0.85)) != first
    # another conversation never merges
    assert ing.merge_entity("Mel2", "person", "other", at(0.99)) != first
    with pytest.raises(ValueError):
        ing.merge_entity("  ", "person", "c")


def test_merge_facet_within_episode():
    chunks, ext = setup(1)
    ing = Ingestor(HashEmbedder(8))
    ing.ingest_conversation(chunks, ext)
    ep = ing.graph.episode_chain[0]
    v = normalize(np.array([0, 0, 0, 0, 0, 0, 1.0, 0]))
    f1 = ing.merge_facet(ep, "new theme", v)
    assert ing.merge_facet(ep, "new theme again", v) == f1
    w = normalize(np.array([0, 0, 0, 0, 0, 0, 0.8, 0.6]))  # cos 0.8
    assert ing.merge_facet(ep, "other", w) != f1


def test_evolution_edges_oriented_by_time():
    chunks, ext = setup(6)
    ckpt, _ = ingest_conversation(chunks, ext)
    g = ckpt.graph
    evo = [e for e in g.edges.values() if e.kind is EdgeKind.EVOLUTION]
    assert evo
    from typedmem.graph import parse_instant

    def when(fp):
        node = g.nodes[fp]
        return parse_instant(node.timestamp or g.nodes[g.episode_of(fp)].timestamp)

    for e in evo:
        assert when(e.src) <= when(e.dst)


def test_extraction_failure_degrades():
    chunks, _ = setup(3)
    ckpt, report = ingest_conversation(chunks, LLMExtractor(FailingChatClient()))
    assert report.degraded == 3 and report.fresh == 3
    assert not list(ckpt.graph.nodes_in_layer(LayerKind.FACET_POINT))
    assert list(ckpt.graph.nodes_in_layer(LayerKind.ENTITY))


def test_unrecoverable_chunk_is_recorded():
    chunk = RawChunk("c", "2023-01-01T00:00:00Z", "[only a header]")
    _, report = ingest_conversation([chunk], LLMExtractor(FailingChatClient()))
    assert report.failed == 1 and report.failures[0]["content_hash"] == chunk.content_hash


def test_rule_stub_end_to_end():
    syn = synthetic_conversation(seed=2, n_sessions=6, n_queries=1)
    chunks = chunks_from_conversation(syn.conversation)
    stub = StubChatClient("rules")
    ckpt, report = ingest_conversation(chunks, LLMExtractor(stub), stub)
    assert report.fresh == 6 and report.degraded == 0
    assert report.causal_passes == 2


def test_checkpoint_round_trip_500_nodes(tmp_path):
    t0 = time.perf_counter()
    syn = synthetic_conversation(seed=3, n_sessions=100, n_queries=1, bridge_free=False)
    chunks = chunks_from_conversation(syn.conversation)
    ckpt, _ = ingest_conversation(chunks, FileExtractor(syn.extractions))
    assert len(ckpt.graph.nodes) >= 500
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "c"))
    assert canonical(loaded) == canonical(ckpt)
    for store in ckpt.stores:
        assert loaded.stores[store.name].rows.tobytes() == store.rows.tobytes()
    assert time.perf_counter() - t0 < 30
