"""Chat-completion clients.

Every model call in the system goes through :class:`ChatClient`.  Besides the
HTTP backend there is a deterministic :class:`StubChatClient` that can replay
scripted or recorded replies, or answer every shipped prompt with simple
lexical rules so the whole pipeline runs offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Union

from .prompts import prompt_kind
from .vectors import tokenize

logger = logging.getLogger(__name__)


class ChatClientError(RuntimeError):
    """Transport or replay failure of a chat backend."""


class ChatClient(Protocol):
    identity: str
    calls: int

    def complete(self, user: str, system: Optional[str] = None, temperature: float = 0.0) -> str:
        ...


def prompt_key(user: str, system: Optional[str] = None) -> str:
    payload = user if system is None else f"{system}\x00{user}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class _CallCounter:
    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def _tick(self, temperature: float) -> None:
        if temperature != 0.0:
            raise ValueError("all model calls run at temperature 0.0")
        with self._lock:
            self.calls += 1


class HttpChatClient(_CallCounter):
    """OpenAI-style ``/chat/completions`` backend.

    Endpoint, key and model come from arguments or ``TYPEDMEM_CHAT_URL``,
    ``TYPEDMEM_CHAT_KEY`` and ``TYPEDMEM_CHAT_MODEL``.  When ``record_to`` is
    set, every reply is appended to a transcript usable by the replay stub.
    """

    def __init__(
        self,
        url: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        record_to: Optional[Union[str, Path]] = None,
    ):
        super().__init__()
        self.url = url or os.environ.get("TYPEDMEM_CHAT_URL", "https://api.openai.com/v1")
        self.model = model or os.environ.get("TYPEDMEM_CHAT_MODEL", "gpt-4o-mini")
        self.api_key = api_key or os.environ.get("TYPEDMEM_CHAT_KEY")
        self.timeout = timeout
        self.identity = f"http:{self.model}"
        self.record_to = Path(record_to) if record_to else None
        self._transcript: dict[str, str] = {}
        if self.record_to and self.record_to.exists():
            self._transcript = json.loads(self.record_to.read_text("utf-8"))

    def complete(self, user: str, system: Optional[str] = None, temperature: float = 0.0) -> str:
        import httpx

        self._tick(temperature)
        messages = [{"role": "system", "content": system}] if system else []
        messages.append({"role": "user", "content": user})
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                self.url.rstrip("/") + "/chat/completions",
                json={"model": self.model, "messages": messages, "temperature": temperature},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            reply = resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ChatClientError(f"chat request failed: {exc}") from exc
        if self.record_to:
            self._transcript[prompt_key(user, system)] = reply
            self.record_to.write_text(json.dumps(self._transcript, indent=1), "utf-8")
        return reply


Script = Union[Mapping[str, str], Callable[[str, Optional[str]], str]]


class StubChatClient(_CallCounter):
    """Deterministic offline client.

    Modes:

    ``scripted``
        ``script`` maps :func:`prompt_key` digests to replies, or is a
        callable ``(user, system) -> reply``.  Unknown prompts fall back to
        ``default`` or raise :class:`ChatClientError`.
    ``recorded``
        Replays a JSON transcript written by :class:`HttpChatClient`.
    ``rules``
        Answers each shipped prompt with lexical-overlap heuristics.
    """

    def __init__(
        self,
        mode: str = "rules",
        script: Optional[Script] = None,
        transcript: Optional[Union[str, Path]] = None,
        default: Optional[str] = None,
    ):
        super().__init__()
        if mode not in ("scripted", "recorded", "rules"):
            raise ValueError(f"unknown stub mode {mode!r}")
        self.mode = mode
        self.script = script if script is not None else {}
        self.default = default
        if mode == "recorded":
            if transcript is None:
                raise ValueError("recorded mode needs a transcript")
            self.script = json.loads(Path(transcript).read_text("utf-8"))
        self.identity = f"stub:{mode}"
        self.prompts: list[str] = []

    def complete(self, user: str, system: Optional[str] = None, temperature: float = 0.0) -> str:
        self._tick(temperature)
        self.prompts.append(user)
        if self.mode == "rules":
            return rule_reply(user)
        if callable(self.script):
            return self.script(user, system)
        key = prompt_key(user, system)
        if key in self.script:
            return self.script[key]
        if self.default is not None:
            return self.default
        raise ChatClientError(f"no scripted reply for prompt {key[:12]}")


class FailingChatClient(_CallCounter):
    """Always raises; used to exercise degraded paths."""

    identity = "stub:failing"

    def __init__(self) -> None:
        super().__init__()

    def complete(self, user: str, system: Optional[str] = None, temperature: float = 0.0) -> str:
        self._tick(temperature)
        raise ChatClientError("backend unavailable")


# ---------------------------------------------------------------------------
# lexical rules behind StubChatClient(mode="rules")

STOPWORDS = frozenset(
    """a an the and or but if of to in on at by for with from about as into is are was
    were be been being do does did has have had i you he she it we they me him her us
    them my your his its our their this that these those what which who whom whose
    when where why how there here not no so than then too very can could would should
    will just""".split()
)


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


def _between(text: str, start: str, end: str) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j < 0 else text[i:j]


def overlap_score(question: str, passage: str) -> float:
    q = set(content_tokens(question))
    if not q:
        return 0.0
    return len(q & set(content_tokens(passage))) / len(q)


_SNIPPET_RE = re.compile(r"^\[(\d+)\]\s?(.*)$")
_ISO_DATE_RE = re.compile(r"\b(\d{4}-\d{2}-\d{2})\b")
_TURN_RE = re.compile(r"^([^:\n]{1,40}):\s*(.+)$")


def _rerank_reply(prompt: str) -> str:
    question = _between(prompt, "Question: ", "\n")
    block = _between(prompt, "Snippets:\n", "\n\nReturn a JSON array")
    scores = []
    for line in block.splitlines():
        m = _SNIPPET_RE.match(line)
        if m:
            score = round(10 * overlap_score(question, m.group(2)))
            scores.append({"index": int(m.group(1)), "score": score})
    return json.dumps(scores)


def _intent_reply(prompt: str) -> str:
    query = _between(prompt, "Query: ", "\n").strip().lower()
    words = set(tokenize(query))
    scores = {"temporal": 0.0, "causal": 0.0, "multi_hop": 0.0, "entity_centric": 0.0}
    if words & {"when", "before", "after", "during", "year", "date", "long", "month", "week"}:
        scores["temporal"] = 0.9
    if words & {"why", "because", "cause", "caused", "led", "reason", "result"}:
        scores["causal"] = 0.9
    if words & {"both", "relate", "across", "combining", "likely", "would", "might", "changed"}:
        scores["multi_hop"] = 0.6
    if words & {"who", "where", "what", "which"} and len(words) > 3:
        scores["entity_centric"] = 0.6
    return json.dumps(scores)


def _extraction_reply(prompt: str) -> str:
    chunk = _between(prompt, "Text chunk:\n", "\n\nReturn a single JSON object").strip()
    lines = [ln.strip() for ln in chunk.splitlines() if ln.strip()]
    body = [ln for ln in lines if not (ln.startswith("[") and ln.endswith("]"))]
    summary = " ".join(body)[:600] or chunk[:600]
    entities: list[dict] = []
    seen: set[str] = set()
    facet_points: list[dict] = []
    by_speaker: dict[str, list[int]] = {}
    temporal = []
    for line in body:
        m = _TURN_RE.match(line)
        speaker, text = (m.group(1).strip(), m.group(2).strip()) if m else (None, line)
        if speaker and speaker.lower() not in seen:
            seen.add(speaker.lower())
            entities.append({"name": speaker, "entity_type": "person"})
        date = _ISO_DATE_RE.search(text)
        facet_points.append(
            {
                "content": f"{speaker} said: {text}" if speaker else text,
                "related_entity_name": speaker,
                "timestamp_text": date.group(1) if date else None,
            }
        )
        if date:
            temporal.append(
                {
                    "subject": text[:60],
                    "time_expression": date.group(1),
                    "normalized_time": date.group(1),
                    "relation": "at",
                }
            )
        by_speaker.setdefault(speaker or "narration", []).append(len(facet_points) - 1)
    facets = [
        {"theme": f"{name} remarks", "facet_point_indices": idx} for name, idx in by_speaker.items()
    ]
    return json.dumps(
        {
            "episode_summary": summary,
            "entities": entities,
            "facet_points": facet_points,
            "facets": facets,
            "temporal_info": temporal,
        }
    )


def _causal_reply(prompt: str) -> str:
    events = _between(prompt, "Events:\n", "\n\nReturn a single JSON object")
    parsed = []
    for line in events.splitlines():
        m = re.match(r"^-?\s*\[?([^\]\s:]+)\]?:\s*(.*)$", line.strip())
        if m:
            parsed.append((m.group(1), m.group(2).lower()))
    pairs = []
    for (prev_id, _), (cur_id, text) in zip(parsed, parsed[1:]):
        if re.search(r"\b(because|so|therefore|after)\b", text):
            pairs.append(
                {
                    "cause_id": prev_id,
                    "effect_id": cur_id,
                    "description": "later event follows from the earlier one",
                    "confidence": 0.8,
                }
            )
    return json.dumps({"causal_pairs": pairs})


def _answer_reply(prompt: str) -> str:
    context = _between(prompt, "Context:\n", "\n\nQuestion: ")
    question = _between(prompt, "\n\nQuestion: ", "\n")
    best, best_score = "", -1.0
    for line in context.splitlines():
        text = re.sub(r"^\[[^\]]*\]\s*", "", line).strip()
        if not text:
            continue
        score = overlap_score(question, text)
        if score > best_score:
            best, best_score = text, score
    return best or "I cannot answer from the provided context."


def _judge_reply(prompt: str) -> str:
    gold = _between(prompt, "Gold answer: ", "\n")
    generated = _between(prompt, "Generated answer: ", "\n")
    gold_tokens = set(content_tokens(gold)) or set(tokenize(gold))
    hit = gold_tokens and gold_tokens <= set(tokenize(generated))
    label = "CORRECT" if hit else "WRONG"
    return json.dumps({"reasoning": "token containment check", "label": label})


_RULES = {
    "rerank": _rerank_reply,
    "intent_user": _intent_reply,
    "extraction": _extraction_reply,
    "causal": _causal_reply,
    "answer": _answer_reply,
    "judge": _judge_reply,
}


def rule_reply(prompt: str) -> str:
    kind = prompt_kind(prompt)
    if kind not in _RULES:
        raise ChatClientError("rules stub does not recognise this prompt")
    return _RULES[kind](prompt)
