import json

import numpy as np
import pytest

from typedmem.llm import FailingChatClient, StubChatClient
from typedmem.routing import (
    GENERAL_ONLY,
    IntentLabel as L,
    IntentRouter,
    KeywordBank,
    PrototypeBank,
    keyword_gate,
    llm_classify,
    load_banks,
    parse_intent_scores,
    prototype_match,
    resolve_labels,
    route,
)
from typedmem.vectors import HashEmbedder, embed_and_normalize

EMB = HashEmbedder()


@pytest.fixture(scope="module")
def banks():
    return load_banks(EMB)


def controlled_bank(entries, dim=8):
    """Prototypes with an exact dot product against the first basis vector."""
    labels, vecs = [], []
    for i, (label, cos) in enumerate(entries):
        v = np.zeros(dim)
        v[0] = cos
        v[1 + i] = np.sqrt(1 - cos * cos)
        labels.append(label)
        vecs.append(v)
    return PrototypeBank(labels, [f"p{i}" for i in range(len(labels))], np.array(vecs))


Q = np.eye(8)[0]


def test_default_bank_counts(banks):
    kw, proto = banks
    assert kw.counts() == {L.TEMPORAL: 18, L.CAUSAL: 14}
    assert proto.counts() == {L.TEMPORAL: 10, L.CAUSAL: 10, L.MULTI_HOP: 14, L.ENTITY_CENTRIC: 12}
    assert len(proto) == 46
    assert np.allclose(np.linalg.norm(proto.vectors, axis=1), 1.0)


@pytest.mark.parametrize(
    "query,expected",
    [
        ("When did Melanie start violin?", {L.TEMPORAL}),
        ("Why did Melanie switch to violin?", {L.CAUSAL}),
        ("What instruments does Melanie play?", None),
        ("WHEN did it happen because of rain?", {L.TEMPORAL, L.CAUSAL}),
        ("Whenever is not a trigger", None),
    ],
)
def test_keyword_gate(banks, query, expected):
    got = keyword_gate(query, banks[0])
    assert got == (frozenset(expected) if expected else None)


def test_keyword_word_boundaries():
    bank = KeywordBank({"temporal": ["how long"]})
    assert bank.matches("How   long did it take?") == {L.TEMPORAL}
    assert bank.matches("howlong") == frozenset()


def test_resolve_labels():
    assert resolve_labels([]) == GENERAL_ONLY
    assert resolve_labels([L.GENERAL]) == GENERAL_ONLY
    assert resolve_labels([L.MULTI_HOP, L.ENTITY_CENTRIC]) == {L.MULTI_HOP}
    assert resolve_labels(["temporal", "general"]) == {L.TEMPORAL}


def test_prototype_identical_text_commits(banks):
    _, proto = banks
    i = proto.labels.index(L.TEMPORAL)
    q = embed_and_normalize(EMB, proto.texts[i])
    assert prototype_match(q, proto) == {L.TEMPORAL}


@pytest.mark.parametrize(
    "entries,expected",
    [
        ([(L.TEMPORAL, 0.50)], None),
        ([(L.TEMPORAL, 0.55)], None),
        ([(L.TEMPORAL, 0.55 + 1e-6)], {L.TEMPORAL}),
        ([(L.TEMPORAL, 0.60), (L.CAUSAL, 0.55)], None),
        ([(L.TEMPORAL, 0.80), (L.CAUSAL, 0.70)], None),
        ([(L.TEMPORAL, 0.65), (L.CAUSAL, 0.55)], None),
        ([(L.TEMPORAL, 0.80), (L.CAUSAL, 0.70 - 1e-6)], {L.TEMPORAL}),
        # same-label runner-up does not block
        ([(L.CAUSAL, 0.80), (L.CAUSAL, 0.79), (L.TEMPORAL, 0.3)], {L.CAUSAL}),
        ([(L.MULTI_HOP, 0.9), (L.ENTITY_CENTRIC, 0.1)], {L.MULTI_HOP}),
        ([(L.ENTITY_CENTRIC, 0.9), (L.MULTI_HOP, 0.1)], {L.ENTITY_CENTRIC}),
    ],
)
def test_prototype_gates(entries, expected):
    got = prototype_match(Q, controlled_bank(entries))
    assert got == (frozenset(expected) if expected else None)


def test_prototype_empty_bank():
    empty = PrototypeBank([], [], np.zeros((0, 8)))
    assert prototype_match(Q, empty) is None


def test_prototype_rejects_non_unit():
    with pytest.raises(ValueError):
        PrototypeBank([L.TEMPORAL], ["x"], np.ones((1, 8)))


def scripted(scores):
    return StubChatClient("scripted", default=json.dumps(scores))


@pytest.mark.parametrize(
    "scores,labels",
    [
        ({"temporal": 0.9, "causal": 0.0, "multi_hop": 0.0, "entity_centric": 0.0}, {L.TEMPORAL}),
        ({"temporal": 0.0, "causal": 0.0, "multi_hop": 0.0, "entity_centric": 0.0}, {L.GENERAL}),
        ({"temporal": 0.0, "causal": 0.0, "multi_hop": 0.9, "entity_centric": 0.8}, {L.MULTI_HOP}),
        ({"temporal": 0.5, "causal": 0.49, "multi_hop": 0.0, "entity_centric": 0.0}, {L.TEMPORAL}),
        # above the general floor but nothing commits
        ({"temporal": 0.3, "causal": 0.3, "multi_hop": 0.0, "entity_centric": 0.0}, {L.GENERAL}),
        ({"temporal": 0.9, "causal": 0.6, "multi_hop": 0.0, "entity_centric": 0.0}, {L.TEMPORAL, L.CAUSAL}),
    ],
)
def test_llm_classify(scores, labels):
    res = llm_classify("q", scripted(scores))
    assert res.labels == labels and res.tier == "llm" and res.llm_calls == 1
    assert res.raw_scores == {k: float(v) for k, v in scores.items()}


@pytest.mark.parametrize("reply", ["no json here", '{"temporal": "high"}', "[1, 2]"])
def test_llm_unparseable_is_general(reply):
    res = llm_classify("q", StubChatClient("scripted", default=reply))
    assert res.labels == GENERAL_ONLY and res.tier == "llm" and res.error


def test_llm_transport_failure():
    res = llm_classify("q", FailingChatClient())
    assert res.labels == GENERAL_ONLY and res.llm_calls == 1 and "transport" in res.error


def test_parse_scores_clamps_and_fills():
    assert parse_intent_scores('{"temporal": 1.5}') == {
        "temporal": 1.0, "causal": 0.0, "multi_hop": 0.0, "entity_centric": 0.0
    }


def test_intent_prompt_has_query():
    stub = StubChatClient("rules")
    llm_classify("Tell me more", stub)
    assert "Tell me more" in stub.prompts[0]
    assert llm_classify("Tell me more", stub).labels == GENERAL_ONLY


def test_route_modes(banks):
    kw, proto = banks
    stub = StubChatClient("rules")
    off = route("When?", "off", client=stub)
    assert off.labels == GENERAL_ONLY and off.tier == "none" and stub.calls == 0

    q = "When did Melanie start violin?"
    hybrid = IntentRouter("hybrid", kw, proto, stub)
    res = hybrid.route(q, embed_and_normalize(EMB, q))
    assert res.tier == "keyword_gated" and res.llm_calls == 0
    assert hybrid.calls == {"keyword": 1, "prototype": 0, "llm": 0}

    q = "What changed for Melanie around the spring?"
    res = hybrid.route(q, embed_and_normalize(EMB, q))
    assert res.tier == "llm" and res.llm_calls == 1 and stub.calls == 1

    direct = IntentRouter("llm", kw, proto, stub)
    res = direct.route("When did it happen?")
    assert res.tier == "llm" and direct.calls["keyword"] == 0


def test_hybrid_without_client_falls_to_none(banks):
    kw, proto = banks
    q = "Tell me more"
    res = IntentRouter("hybrid", kw, proto, None).route(q, embed_and_normalize(EMB, q))
    assert res.labels == GENERAL_ONLY and res.tier == "none" and res.llm_calls == 0


def test_route_is_deterministic(banks):
    kw, proto = banks
    q = "How does Melanie's hobby relate to Caroline?"
    v = embed_and_normalize(EMB, q)
    a = IntentRouter("hybrid", kw, proto, StubChatClient("rules")).route(q, v)
    b = IntentRouter("hybrid", kw, proto, StubChatClient("rules")).route(q, v)
    assert a == b
