"""Context token counting with named, swappable tokenizers."""

from __future__ import annotations

import re
from typing import Callable

_REGEX = re.compile(r"\w+|[^\w\s]")

TOKENIZERS: dict[str, Callable[[str], int]] = {
    # words and single punctuation marks
    "regex": lambda text: len(_REGEX.findall(text)),
    "whitespace": lambda text: len(text.split()),
}


def register_tokenizer(name: str, counter: Callable[[str], int]) -> None:
    """Plug in another counter, e.g. a byte-pair encoder's ``len(encode(text))``."""
    TOKENIZERS[name] = counter


def count_tokens(text: str, tokenizer: str = "regex") -> int:
    try:
        counter = TOKENIZERS[tokenizer]
    except KeyError:
        raise ValueError(f"unknown tokenizer {tokenizer!r}") from None
    return counter(text) if text else 0
