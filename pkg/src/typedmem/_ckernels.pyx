# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_pykernels`` for the reference."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef enum:
    MAX_HOPS = 4
    EPISODE_LAYER = 3

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double UNIT = 1.0 / 9007199254740992.0


cdef inline uint64_t _fnv1a64(const unsigned char[:] data, uint64_t seed) noexcept nogil:
    cdef uint64_t h = FNV_OFFSET ^ seed
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= FNV_PRIME
    return h


def fnv1a64(bytes data, uint64_t seed):
    return _fnv1a64(data, seed)


def hash_embed_tokens(list tokens, uint64_t seed, Py_ssize_t dim):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acc = np.zeros(dim, dtype=np.float64)
    cdef double[:] out = acc
    cdef uint64_t h, z
    cdef Py_ssize_t i
    cdef bytes token
    for token in tokens:
        h = _fnv1a64(token, seed)
        for i in range(dim):
            z = h + <uint64_t>(i + 1) * GOLDEN
            z = (z ^ (z >> 30)) * MIX1
            z = (z ^ (z >> 27)) * MIX2
            z = z ^ (z >> 31)
            out[i] += (<double>(z >> 11)) * UNIT * 2.0 - 1.0
    return acc


cdef struct Ctx:
    const signed char* layer
    const int64_t* up_ptr
    const int64_t* up_edge
    const int64_t* up_dst
    const double* edge_cost
    double c_hop
    double* best
    int64_t* best_anchor
    int64_t* best_edges
    int64_t* best_hops
    int64_t path[MAX_HOPS]
    int64_t count


cdef void _climb(Ctx* ctx, int64_t v, double cost, int depth, int64_t slot) noexcept nogil:
    cdef int64_t j, e, i
    if ctx.layer[v] == EPISODE_LAYER:
        ctx.count += 1
        if cost < ctx.best[v]:
            ctx.best[v] = cost
            ctx.best_anchor[v] = slot
            ctx.best_hops[v] = depth
            for i in range(MAX_HOPS):
                ctx.best_edges[v * MAX_HOPS + i] = ctx.path[i] if i < depth else -1
        return
    if depth == MAX_HOPS:
        return
    for j in range(ctx.up_ptr[v], ctx.up_ptr[v + 1]):
        e = ctx.up_edge[j]
        ctx.path[depth] = e
        _climb(ctx, ctx.up_dst[j], cost + (ctx.edge_cost[e] + ctx.c_hop), depth + 1, slot)


def search_paths(
    const signed char[::1] layer,
    const int64_t[::1] up_ptr,
    const int64_t[::1] up_edge,
    const int64_t[::1] up_dst,
    const int64_t[::1] rel_ptr,
    const int64_t[::1] rel_edge,
    const int64_t[::1] rel_other,
    const double[::1] edge_cost,
    const int64_t[::1] anchors,
    const double[::1] anchor_cost,
    double c_hop,
    bint bridges,
):
    cdef Py_ssize_t n = layer.shape[0]
    best = np.full(n, INFINITY, dtype=np.float64)
    best_anchor = np.full(n, -1, dtype=np.int64)
    best_edges = np.full((n, MAX_HOPS), -1, dtype=np.int64)
    best_hops = np.zeros(n, dtype=np.int64)
    cdef double[::1] best_v = best
    cdef int64_t[::1] best_anchor_v = best_anchor
    cdef int64_t[:, ::1] best_edges_v = best_edges
    cdef int64_t[::1] best_hops_v = best_hops
    cdef Ctx ctx
    cdef Py_ssize_t slot
    cdef int64_t a, j, e
    cdef double d
    cdef double dummy_cost = 0.0
    cdef int64_t dummy_idx = 0
    if n == 0:
        return best, best_anchor, best_edges, best_hops, 0
    ctx.layer = &layer[0]
    ctx.up_ptr = &up_ptr[0]
    ctx.up_edge = &up_edge[0] if up_edge.shape[0] else &dummy_idx
    ctx.up_dst = &up_dst[0] if up_dst.shape[0] else &dummy_idx
    ctx.edge_cost = &edge_cost[0] if edge_cost.shape[0] else &dummy_cost
    ctx.c_hop = c_hop
    ctx.best = &best_v[0]
    ctx.best_anchor = &best_anchor_v[0]
    ctx.best_edges = &best_edges_v[0, 0]
    ctx.best_hops = &best_hops_v[0]
    ctx.count = 0
    for j in range(MAX_HOPS):
        ctx.path[j] = -1
    with nogil:
        for slot in range(anchors.shape[0]):
            a = anchors[slot]
            d = anchor_cost[slot]
            _climb(&ctx, a, d, 0, slot)
            if bridges:
                for j in range(rel_ptr[a], rel_ptr[a + 1]):
                    e = rel_edge[j]
                    ctx.path[0] = e
                    _climb(&ctx, rel_other[j], d + (ctx.edge_cost[e] + c_hop), 1, slot)
    return best, best_anchor, best_edges, best_hops, ctx.count
