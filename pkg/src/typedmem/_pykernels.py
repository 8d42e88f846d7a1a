"""Pure-Python/numpy versions of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation so that both backends
produce bit-identical results.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_UNIT = 2.0**-53

EPISODE_LAYER = 3
MAX_HOPS = 4


def fnv1a64(data: bytes, seed: int) -> int:
    h = (_FNV_OFFSET ^ seed) & _MASK
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def _splitmix_stream(start: int, dim: int) -> np.ndarray:
    steps = np.arange(1, dim + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(start) + steps * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _UNIT * 2.0 - 1.0


def hash_embed_tokens(tokens: list[bytes], seed: int, dim: int) -> np.ndarray:
    """Sum of one pseudo-random [-1, 1) vector per token (not normalized)."""
    acc = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        acc += _splitmix_stream(fnv1a64(token, seed), dim)
    return acc


def search_paths(
    layer: np.ndarray,
    up_ptr: np.ndarray,
    up_edge: np.ndarray,
    up_dst: np.ndarray,
    rel_ptr: np.ndarray,
    rel_edge: np.ndarray,
    rel_other: np.ndarray,
    edge_cost: np.ndarray,
    anchors: np.ndarray,
    anchor_cost: np.ndarray,
    c_hop: float,
    bridges: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Min-cost typed-path search from every anchor to every Episode.

    Returns per-node arrays ``(best_cost, best_anchor, best_edges, best_hops)``
    (only Episode entries are meaningful) and the number of path instances
    enumerated.  Ties keep the first instance in enumeration order: anchors in
    the given order, backbone before bridges, adjacency in CSR order.
    """
    n = len(layer)
    layer_l = layer.tolist()
    up_ptr_l = up_ptr.tolist()
    up_edge_l = up_edge.tolist()
    up_dst_l = up_dst.tolist()
    cost_l = edge_cost.tolist()
    best = [math.inf] * n
    best_anchor = [-1] * n
    best_hops = [0] * n
    best_edges = [[-1] * MAX_HOPS for _ in range(n)]
    path = [-1] * MAX_HOPS
    counter = [0]

    def climb(v: int, cost: float, depth: int, slot: int) -> None:
        if layer_l[v] == EPISODE_LAYER:
            counter[0] += 1
            if cost < best[v]:
                best[v] = cost
                best_anchor[v] = slot
                best_hops[v] = depth
                row = best_edges[v]
                for i in range(MAX_HOPS):
                    row[i] = path[i] if i < depth else -1
            return
        if depth == MAX_HOPS:
            return
        for j in range(up_ptr_l[v], up_ptr_l[v + 1]):
            e = up_edge_l[j]
            path[depth] = e
            climb(up_dst_l[j], cost + (cost_l[e] + c_hop), depth + 1, slot)

    rel_ptr_l = rel_ptr.tolist()
    rel_edge_l = rel_edge.tolist()
    rel_other_l = rel_other.tolist()
    for slot, (a, d) in enumerate(zip(anchors.tolist(), anchor_cost.tolist())):
        climb(a, d, 0, slot)
        if bridges:
            for j in range(rel_ptr_l[a], rel_ptr_l[a + 1]):
                e = rel_edge_l[j]
                path[0] = e
                climb(rel_other_l[j], d + (cost_l[e] + c_hop), 1, slot)

    return (
        np.asarray(best, dtype=np.float64),
        np.asarray(best_anchor, dtype=np.int64),
        np.asarray(best_edges, dtype=np.int64).reshape(n, MAX_HOPS),
        np.asarray(best_hops, dtype=np.int64),
        counter[0],
    )
