"""Exact inner-product search over L2-normalized embeddings.

One flat store per node layer plus two edge stores.  All vectors are unit
norm, so the inner product is the cosine similarity.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import kernels
from .graph import LayerKind

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384
HASH_SEED = 0x5EED_C0DE_1234_ABCD
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

LAYER_STORES = {
    LayerKind.EPISODE: "episode",
    LayerKind.FACET: "facet",
    LayerKind.FACET_POINT: "facet_point",
    LayerKind.ENTITY: "entity",
}
EDGE_RELATION = "edge_relation"
EDGE_SEMANTIC = "edge_semantic"
STORE_NAMES = ("episode", "facet", "facet_point", "entity", EDGE_RELATION, EDGE_SEMANTIC)


class EmbedderError(RuntimeError):
    """Transient failure of an embedding backend."""


class Embedder(Protocol):
    identity: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Raw (unnormalized) vectors, shape ``(len(texts), dimension)``."""
        ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


class HashEmbedder:
    """Deterministic, dependency-free embedder for tests and offline runs.

    Each lower-cased alphanumeric token is hashed (FNV-1a with a fixed seed)
    and expanded into a pseudo-random vector with a splitmix64 stream; the
    text vector is the sum over tokens.  Equal text gives bit-equal vectors
    and shared tokens give positive cosine.
    """

    def __init__(self, dimension: int = DEFAULT_DIM, seed: int = HASH_SEED):
        self.dimension = dimension
        self.seed = seed
        self.identity = f"hash-splitmix64:d={dimension}:seed={seed:#x}"

    def embed_one(self, text: str) -> np.ndarray:
        tokens = tokenize(text) or [text.strip().casefold()]
        return kernels.hash_embed_tokens(
            [t.encode("utf-8") for t in tokens], self.seed, self.dimension
        )

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.stack([self.embed_one(t) for t in texts])


class HttpEmbedder:
    """Remote embedder speaking ``{"texts": [...]} -> {"vectors": [[...]]}``."""

    def __init__(
        self,
        url: Optional[str] = None,
        dimension: int = DEFAULT_DIM,
        api_key: Optional[str] = None,
        identity: Optional[str] = None,
        timeout: float = 60.0,
    ):
        self.url = url or os.environ.get("TYPEDMEM_EMBED_URL", "")
        if not self.url:
            raise ValueError("no embedder URL configured (TYPEDMEM_EMBED_URL)")
        self.api_key = api_key or os.environ.get("TYPEDMEM_EMBED_KEY")
        self.dimension = dimension
        self.identity = identity or f"http:{self.url}"
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                self.url, json={"texts": list(texts)}, headers=headers, timeout=self.timeout
            )
            resp.raise_for_status()
            vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise EmbedderError(f"embedding request failed: {exc}") from exc
        if vectors.shape != (len(texts), self.dimension):
            raise EmbedderError(f"embedder returned shape {vectors.shape}")
        return vectors


def row_dots(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Per-row dot products in float64.

    An elementwise product summed along each row depends only on that row,
    so identical rows always score identically.  A BLAS matrix-vector
    product does not guarantee this.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return (rows * np.asarray(query, dtype=np.float64)).sum(axis=1)


def normalize(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return (vectors / norms).astype(np.float32)


def embed_and_normalize(embedder: Embedder, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    return normalize(embedder.embed([text])[0])


def embed_many(embedder: Embedder, texts: Sequence[str]) -> np.ndarray:
    if any(not t or not t.strip() for t in texts):
        raise ValueError("cannot embed empty text")
    if not texts:
        return np.zeros((0, embedder.dimension), dtype=np.float32)
    return normalize(embedder.embed(list(texts)))


@dataclass(frozen=True)
class SearchHit:
    owner: str
    similarity: float
    row: int

    @property
    def distance(self) -> float:
        return 1.0 - self.similarity


@dataclass
class FlatVectorStore:
    """Append-only matrix of unit vectors with one owner id per row."""

    name: str
    dim: int = DEFAULT_DIM
    owners: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._chunks: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = np.zeros((0, self.dim), dtype=np.float32)

    def __len__(self) -> int:
        return len(self.owners)

    def add(self, owner: str, vector: np.ndarray) -> int:
        vector = np.asarray(vector, dtype=np.float32).reshape(1, -1)
        if vector.shape[1] != self.dim:
            raise ValueError(f"store {self.name} expects dim {self.dim}, got {vector.shape[1]}")
        self._chunks.append(vector)
        self._matrix = None
        self.owners.append(owner)
        return len(self.owners) - 1

    @property
    def rows(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.concatenate(self._chunks, axis=0)
            self._chunks = [self._matrix]
        return self._matrix

    def set_rows(self, rows: np.ndarray, owners: Sequence[str]) -> None:
        rows = np.ascontiguousarray(rows, dtype=np.float32).reshape(-1, self.dim)
        if len(rows) != len(owners):
            raise ValueError("row/owner count mismatch")
        self.owners = list(owners)
        self._chunks = [rows] if len(rows) else []
        self._matrix = rows

    def vector(self, row: int) -> np.ndarray:
        return self.rows[row]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        if not len(self):
            return np.zeros(0)
        return row_dots(self.rows, query)

    def top_k(self, query: np.ndarray, k: int) -> list[SearchHit]:
        """Exact top-``k`` by cosine; ties go to the lower row index."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not len(self):
            return []
        sims = self.similarities(query)
        order = np.argsort(-sims, kind="stable")[:k]
        return [SearchHit(self.owners[i], float(sims[i]), int(i)) for i in order]


class VectorStores:
    """The six named stores sharing one embedder and dimension."""

    def __init__(self, dim: int = DEFAULT_DIM, embedder_identity: str = ""):
        self.dim = dim
        self.embedder_identity = embedder_identity
        self.stores = {name: FlatVectorStore(name, dim) for name in STORE_NAMES}

    def __getitem__(self, name: str) -> FlatVectorStore:
        return self.stores[name]

    def for_layer(self, layer: LayerKind) -> FlatVectorStore:
        return self.stores[LAYER_STORES[layer]]

    def __iter__(self):
        return iter(self.stores.values())
