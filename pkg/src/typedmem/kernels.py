"""Kernel backend selection.

The compiled extension is used when it imports; set ``TYPEDMEM_PURE_PYTHON=1``
to force the numpy/Python fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
fnv1a64 = _pykernels.fnv1a64
hash_embed_tokens = _pykernels.hash_embed_tokens
search_paths = _pykernels.search_paths

if os.environ.get("TYPEDMEM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        fnv1a64 = _ckernels.fnv1a64
        hash_embed_tokens = _ckernels.hash_embed_tokens
        search_paths = _ckernels.search_paths


def backends() -> dict:
    """All importable backends by name, for tests and benchmarks."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
