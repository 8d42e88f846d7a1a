"""Raw chunks, the extraction schema and the pluggable extractors."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Union

from .graph import ENTITY_TYPES, GraphError, parse_instant
from .jsonutil import first_json
from .llm import ChatClient, ChatClientError
from .prompts import render

logger = logging.getLogger(__name__)


class ExtractionError(ValueError):
    """Extractor output is missing or does not match the schema."""


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RawChunk:
    conversation_id: str
    header_timestamp: str
    text: str
    dia_ids: tuple[str, ...] = ()

    @property
    def content_hash(self) -> str:
        return sha256_hex(self.text)


# --------------------------------------------------------------------------
# conversation input

_SESSION_TS = re.compile(
    r"^\s*(\d{1,2}):(\d{2})\s*([ap]m)\s+on\s+(\d{1,2})\s+([A-Za-z]+),?\s+(\d{4})\s*$", re.I
)
_MONTHS = {
    m: i + 1
    for i, m in enumerate(
        "january february march april may june july august september october november december".split()
    )
}


def parse_session_time(value: str) -> datetime:
    """ISO-8601, or the ``1:56 pm on 8 May, 2023`` style session header."""
    m = _SESSION_TS.match(value)
    if m:
        hour, minute, ampm, day, month, year = m.groups()
        key = month.lower()
        month_no = _MONTHS.get(key) or next(
            (no for name, no in _MONTHS.items() if name[:3] == key[:3]), None
        )
        if not month_no:
            raise ValueError(f"unknown month in {value!r}")
        h = int(hour) % 12 + (12 if ampm.lower() == "pm" else 0)
        return datetime(int(year), month_no, int(day), h, int(minute), tzinfo=timezone.utc)
    return parse_instant(value)


def header_text(moment: datetime) -> str:
    hour = moment.hour % 12 or 12
    ampm = "am" if moment.hour < 12 else "pm"
    return f"{hour}:{moment.minute:02d} {ampm} on {moment.day} {moment.strftime('%B')}, {moment.year}"


def chunks_from_conversation(doc: Mapping[str, Any]) -> list[RawChunk]:
    """One chunk per session, ordered by session time."""
    conv_id = str(doc["conversation_id"])
    chunks = []
    for session in doc.get("sessions", []):
        moment = parse_session_time(session["timestamp"])
        turns = session.get("turns", [])
        lines = [f"[{header_text(moment)}]"]
        lines += [f"{t['speaker']}: {t['text']}" for t in turns]
        dia_ids = tuple(str(t["dia_id"]) for t in turns if t.get("dia_id"))
        chunks.append(RawChunk(conv_id, moment.isoformat(), "\n".join(lines), dia_ids))
    chunks.sort(key=lambda c: parse_instant(c.header_timestamp))
    return chunks


def load_conversation(path: Union[str, Path]) -> list[RawChunk]:
    return chunks_from_conversation(json.loads(Path(path).read_text("utf-8")))


# --------------------------------------------------------------------------
# schema

_PARTIAL_DATE = re.compile(r"^(\d{4})(?:-(\d{2}))?(?:-(\d{2}))?$")


def parse_loose_iso(value: str) -> datetime:
    """ISO-8601 instant, also accepting year or year-month precision."""
    m = _PARTIAL_DATE.match(value.strip())
    if m:
        year, month, day = m.groups()
        return datetime(int(year), int(month or 1), int(day or 1), tzinfo=timezone.utc)
    return parse_instant(value)


@dataclass
class ExtractionResult:
    episode_summary: str
    entities: list[dict] = field(default_factory=list)
    facet_points: list[dict] = field(default_factory=list)
    facets: list[dict] = field(default_factory=list)
    temporal_info: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _req_str(item: Mapping, key: str, nullable: bool = False) -> Optional[str]:
    value = item.get(key)
    if value is None and nullable:
        return None
    if not isinstance(value, str):
        raise ExtractionError(f"field {key!r} must be a string")
    return value


def _list_of_objects(doc: Mapping, key: str) -> list[Mapping]:
    value = doc.get(key)
    if not isinstance(value, list) or not all(isinstance(v, Mapping) for v in value):
        raise ExtractionError(f"{key!r} must be an array of objects")
    return value


def validate_extraction(doc: Any) -> ExtractionResult:
    """Check ``doc`` against the five-field schema and return a clean copy."""
    if not isinstance(doc, Mapping):
        raise ExtractionError("extraction output is not a JSON object")
    summary = _req_str(doc, "episode_summary")
    if not summary.strip():
        raise ExtractionError("empty episode_summary")
    entities = []
    for item in _list_of_objects(doc, "entities"):
        name = _req_str(item, "name")
        etype = (_req_str(item, "entity_type", nullable=True) or "other").strip().lower()
        if name.strip():
            entities.append({"name": name, "entity_type": etype if etype in ENTITY_TYPES else "other"})
    points = []
    for item in _list_of_objects(doc, "facet_points"):
        content = _req_str(item, "content")
        if not content.strip():
            raise ExtractionError("empty facet_point content")
        points.append(
            {
                "content": content,
                "related_entity_name": _req_str(item, "related_entity_name", nullable=True),
                "timestamp_text": _req_str(item, "timestamp_text", nullable=True),
            }
        )
    facets = []
    for item in _list_of_objects(doc, "facets"):
        theme = _req_str(item, "theme")
        indices = item.get("facet_point_indices")
        if not isinstance(indices, list) or not all(
            isinstance(i, int) and not isinstance(i, bool) for i in indices
        ):
            raise ExtractionError("facet_point_indices must be an array of integers")
        if any(i < 0 or i >= len(points) for i in indices):
            raise ExtractionError(f"facet index out of range for {len(points)} facet_points")
        facets.append({"theme": theme, "facet_point_indices": list(indices)})
    temporal = []
    for item in _list_of_objects(doc, "temporal_info"):
        normalized = _req_str(item, "normalized_time", nullable=True)
        if normalized is not None:
            try:
                parse_loose_iso(normalized)
            except (GraphError, ValueError) as exc:
                raise ExtractionError(f"normalized_time {normalized!r} is not ISO-8601") from exc
        temporal.append(
            {
                "subject": _req_str(item, "subject"),
                "time_expression": _req_str(item, "time_expression"),
                "normalized_time": normalized,
                "relation": _req_str(item, "relation", nullable=True) or "",
            }
        )
    return ExtractionResult(summary, entities, points, facets, temporal)


# --------------------------------------------------------------------------
# extractors


class Extractor(Protocol):
    def extract(self, chunk: RawChunk) -> ExtractionResult:
        ...


class LLMExtractor:
    def __init__(self, client: ChatClient):
        self.client = client
        self.last_reply: Optional[str] = None

    def extract(self, chunk: RawChunk) -> ExtractionResult:
        self.last_reply = None
        try:
            reply = self.client.complete(render("extraction", chunk=chunk.text))
        except ChatClientError as exc:
            raise ExtractionError(str(exc)) from exc
        self.last_reply = reply
        doc = first_json(reply, dict)
        if doc is None:
            raise ExtractionError("no JSON object in extraction reply")
        return validate_extraction(doc)


class FileExtractor:
    """Pre-extracted records keyed by chunk content hash."""

    def __init__(self, records: Mapping[str, Any]):
        self.records = dict(records)

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "FileExtractor":
        return cls(json.loads(Path(path).read_text("utf-8")))

    def extract(self, chunk: RawChunk) -> ExtractionResult:
        record = self.records.get(chunk.content_hash)
        if record is None:
            raise ExtractionError(f"no pre-extracted record for {chunk.content_hash[:12]}")
        return validate_extraction(record)


_SPEAKER_RE = re.compile(r"^([^:\n\[\]]{1,40}):\s")


class FallbackExtractor:
    """Summary and entity list only.

    Salvages both fields from a malformed reply when possible, otherwise
    builds them from the chunk text (body lines and speaker names).
    """

    def extract(self, chunk: RawChunk, reply: Optional[str] = None) -> ExtractionResult:
        summary, entities = "", []
        doc = first_json(reply, dict) if reply else None
        if isinstance(doc, Mapping):
            if isinstance(doc.get("episode_summary"), str):
                summary = doc["episode_summary"].strip()
            try:
                entities = validate_extraction(
                    {
                        "episode_summary": summary or "x",
                        "entities": doc.get("entities", []),
                        "facet_points": [],
                        "facets": [],
                        "temporal_info": [],
                    }
                ).entities
            except ExtractionError:
                entities = []
        lines = [ln.strip() for ln in chunk.text.splitlines() if ln.strip()]
        body = [ln for ln in lines if not (ln.startswith("[") and ln.endswith("]"))]
        if not summary:
            summary = " ".join(body)[:600].strip()
        if not summary:
            raise ExtractionError("chunk has no text to summarise")
        if not entities:
            seen = set()
            for ln in body:
                m = _SPEAKER_RE.match(ln)
                if m and m.group(1).strip().lower() not in seen:
                    seen.add(m.group(1).strip().lower())
                    entities.append({"name": m.group(1).strip(), "entity_type": "person"})
        return ExtractionResult(summary, entities)


def extract(
    extractor: Extractor, chunk: RawChunk, fallback: Optional[FallbackExtractor] = None
) -> tuple[ExtractionResult, bool]:
    """Run ``extractor``; on failure use the fallback.  Returns ``(result, degraded)``.

    Raises :class:`ExtractionError` only when the fallback fails too.
    """
    try:
        return extractor.extract(chunk), False
    except ExtractionError as exc:
        logger.info("extraction failed for %s (%s); using fallback", chunk.content_hash[:12], exc)
    reply = getattr(extractor, "last_reply", None)
    return (fallback or FallbackExtractor()).extract(chunk, reply), True
