"""Prompt templates shipped as package data.

Templates contain literal JSON braces, so slots are filled by plain
substitution of ``{name}`` markers rather than ``str.format``.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

PROMPT_NAMES = (
    "extraction",
    "causal",
    "rerank",
    "answer",
    "judge",
    "intent_system",
    "intent_user",
)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    if name not in PROMPT_NAMES:
        raise KeyError(f"unknown prompt {name!r}")
    return resources.files("typedmem").joinpath(f"data/prompts/{name}.txt").read_text("utf-8")


def render(name: str, **slots: str) -> str:
    text = load_prompt(name)
    for key, value in slots.items():
        marker = "{" + key + "}"
        if marker not in text:
            raise KeyError(f"prompt {name!r} has no slot {key!r}")
        text = text.replace(marker, value)
    return text


def prompt_kind(prompt: str) -> str | None:
    """Which shipped template ``prompt`` was rendered from, by its fixed prefix."""
    for name in PROMPT_NAMES:
        head = load_prompt(name).split("{", 1)[0][:60]
        if prompt.startswith(head):
            return name
    return None
