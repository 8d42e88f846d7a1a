import json

import httpx
import numpy as np
import pytest

from typedmem.llm import (
    ChatClientError,
    FailingChatClient,
    HttpChatClient,
    StubChatClient,
    prompt_key,
    rule_reply,
)
from typedmem.prompts import load_prompt, prompt_kind, render
from typedmem.vectors import EmbedderError, HttpEmbedder


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload, self.status_code = payload, status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise httpx.HTTPStatusError("bad", request=None, response=None)

    def json(self):
        return self.payload


def test_prompts_ship_with_slots():
    for name, slot in [("rerank", "{question}"), ("extraction", "{chunk}"), ("causal", "{events}"), ("intent_user", "{query}"), ("judge", "{gold_answer}")]:
        assert slot in load_prompt(name)
    text = render("rerank", question="Q?", snippets="[0] a")
    assert prompt_kind(text) == "rerank"


def test_stub_rules_are_deterministic():
    prompt = render("rerank", question="violin lessons", snippets="[0] Melanie violin lessons\n[1] fish")
    a, b = StubChatClient("rules"), StubChatClient("rules")
    assert a.complete(prompt) == b.complete(prompt)
    scores = json.loads(rule_reply(prompt))
    assert scores[0]["score"] > scores[1]["score"]


def test_stub_scripted_and_recorded(tmp_path):
    key = prompt_key("hello", "sys")
    stub = StubChatClient("scripted", script={key: "world"})
    assert stub.complete("hello", "sys") == "world" and stub.calls == 1
    with pytest.raises(ChatClientError):
        stub.complete("unknown")
    path = tmp_path / "t.json"
    path.write_text(json.dumps({key: "replayed"}))
    assert StubChatClient("recorded", transcript=path).complete("hello", "sys") == "replayed"
    with pytest.raises(ValueError):
        StubChatClient("recorded")


def test_temperature_fixed():
    with pytest.raises(ValueError):
        StubChatClient("rules").complete("x", temperature=0.7)


def test_rules_reject_unknown_prompt():
    with pytest.raises(ChatClientError):
        StubChatClient("rules").complete("free text")
    with pytest.raises(ChatClientError):
        FailingChatClient().complete("x")


def test_http_client(monkeypatch, tmp_path):
    seen = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen.update(url=url, body=json, headers=headers)
        return FakeResponse({"choices": [{"message": {"content": "hi"}}]})

    monkeypatch.setattr(httpx, "post", fake_post)
    client = HttpChatClient("http://x/v1/", "m", "k", record_to=tmp_path / "rec.json")
    assert client.complete("u", "s") == "hi"
    assert seen["url"] == "http://x/v1/chat/completions"
    assert seen["body"]["temperature"] == 0.0 and seen["body"]["messages"][0]["role"] == "system"
    assert seen["headers"]["Authorization"] == "Bearer k"
    replay = StubChatClient("recorded", transcript=tmp_path / "rec.json")
    assert replay.complete("u", "s") == "hi"


def test_http_client_errors(monkeypatch):
    monkeypatch.setattr(httpx, "post", lambda *a, **k: FakeResponse({}, 500))
    with pytest.raises(ChatClientError):
        HttpChatClient("http://x").complete("u")
    monkeypatch.setattr(httpx, "post", lambda *a, **k: FakeResponse({"choices": []}))
    with pytest.raises(ChatClientError):
        HttpChatClient("http://x").complete("u")


def test_http_embedder(monkeypatch):
    monkeypatch.setattr(httpx, "post", lambda *a, **k: FakeResponse({"vectors": [[3.0, 4.0]]}))
    emb = HttpEmbedder("http://e", dimension=2)
    assert np.array_equal(emb.embed(["a"]), [[3.0, 4.0]])
    with pytest.raises(EmbedderError):
        HttpEmbedder("http://e", dimension=3).embed(["a"])
    monkeypatch.delenv("TYPEDMEM_EMBED_URL", raising=False)
    with pytest.raises(ValueError):
        HttpEmbedder()
