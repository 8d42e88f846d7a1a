"""Lenient extraction of JSON values embedded in model replies."""

from __future__ import annotations

import json
from typing import Any, Optional

_DECODER = json.JSONDecoder()


def first_json(text: str, kind: type = list) -> Optional[Any]:
    """Return the first decodable JSON value of ``kind`` found in ``text``.

    Surrounding prose and markdown fences are ignored.  ``None`` if nothing
    decodes.
    """
    opener = "[" if kind is list else "{"
    pos = text.find(opener)
    while pos != -1:
        try:
            value, _ = _DECODER.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(value, kind):
                return value
        pos = text.find(opener, pos + 1)
    return None
