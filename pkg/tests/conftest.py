import numpy as np
import pytest
from hypothesis import settings

from typedmem import kernels, vectors
from typedmem.checkpoint import Checkpoint
from typedmem.graph import Edge, EdgeKind, LayerKind, MemoryGraph, Node
from typedmem.vectors import VectorStores

# fixed example generation so every run exercises the same cases
settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")

BACKENDS = sorted(kernels.backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    mod = kernels.backends()[request.param]
    monkeypatch.setattr(kernels, "search_paths", mod.search_paths)
    monkeypatch.setattr(kernels, "hash_embed_tokens", mod.hash_embed_tokens)
    monkeypatch.setattr(vectors.kernels, "hash_embed_tokens", mod.hash_embed_tokens)
    return request.param


def unit(*values, dim=8):
    v = np.zeros(dim)
    v[: len(values)] = values
    return v / np.linalg.norm(v)


class GraphBuilder:
    """Hand-built graphs with explicit vectors for exact-value tests."""

    def __init__(self, dim=8):
        self.graph = MemoryGraph()
        self.stores = VectorStores(dim, "test")
        self.dim = dim
        self._day = 0

    def node(self, node_id, layer, vec, **kw):
        if layer is LayerKind.EPISODE and "timestamp" not in kw:
            self._day += 1
            kw["timestamp"] = f"2023-05-{self._day:02d}T00:00:00Z"
        if layer is LayerKind.ENTITY:
            kw.setdefault("entity_type", "person")
        node = Node(node_id, layer, kw.pop("text", node_id), "c", **kw)
        self.graph.add_node(node)
        node.embedding_ref = self.stores.for_layer(layer).add(node_id, vec)
        return node_id

    def edge(self, kind, src, dst, vec=None, **kw):
        if kind is EdgeKind.CAUSAL:
            kw.setdefault("confidence", 0.9)
        edge = Edge(kind, src, dst, **kw)
        self.graph.add_edge(edge)
        if kind is not EdgeKind.BELONGS_TO:
            store = "edge_semantic" if kind is EdgeKind.SEMANTIC else "edge_relation"
            v = vec if vec is not None else unit(*([0] * (self.dim - 1) + [1]), dim=self.dim)
            edge.embedding_ref = self.stores[store].add(edge.id, v)
        return edge.id

    @property
    def ckpt(self):
        return Checkpoint(self.graph, self.stores)


@pytest.fixture
def builder():
    return GraphBuilder()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
