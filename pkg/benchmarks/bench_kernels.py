"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--nodes 2000] [--queries 20]

Both backends run on identical inputs; the script checks that their outputs
agree before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from typedmem import kernels, retrieval
from typedmem.config import RunConfig
from typedmem.synthetic import random_checkpoint, random_query
from typedmem.vectors import HASH_SEED, tokenize


def _search_inputs(ckpt, query, cfg):
    g = ckpt.graph
    anchors = retrieval.discover_anchors(g, ckpt.stores, query, cfg.anchor_k)
    model = retrieval.EdgeCostModel.from_config(cfg, ["temporal"], retrieval.recall_set(g, anchors))
    cg = retrieval.compile_graph(g)
    costs = retrieval.edge_cost_array(cg, model, ckpt.stores, query)
    return (
        cg.layer, cg.up_ptr, cg.up_edge, cg.up_dst, cg.rel_ptr, cg.rel_edge, cg.rel_other, costs,
        np.array([cg.index[a.node_id] for a in anchors], dtype=np.int64),
        np.array([a.cost for a in anchors]),
        cfg.hop_penalty,
        True,
    )


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    found = kernels.backends()
    if "cython" not in found:
        print("compiled backend not built; only the Python fallback is available")
    cfg = RunConfig()
    ckpt = random_checkpoint(7, args.nodes, dim=64, relation_rate=1.5)
    inputs = [_search_inputs(ckpt, random_query(s, ckpt), cfg) for s in range(args.queries)]
    words = " ".join(n.text for n in ckpt.graph.nodes.values()) * 5
    tokens = [t.encode("utf-8") for t in tokenize(words)]

    print(f"graph: {len(ckpt.graph.nodes)} nodes, {len(ckpt.graph.edges)} edges; "
          f"{args.queries} queries; {len(tokens)} tokens to embed")
    print(f"{'backend':<8} {'search ms/query':>16} {'embed ms':>10}")
    results = {}
    for name, mod in found.items():
        t_search, out = _best_of(lambda: [mod.search_paths(*x) for x in inputs], args.repeat)
        t_embed, vec = _best_of(lambda: mod.hash_embed_tokens(tokens, HASH_SEED, 384), args.repeat)
        results[name] = (t_search, t_embed, out, vec)
        print(f"{name:<8} {1e3 * t_search / args.queries:>16.3f} {1e3 * t_embed:>10.3f}")

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        for a, b in zip(py[2], cy[2]):
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[2], b[2]), "search mismatch"
        assert np.array_equal(py[3], cy[3]), "embedding mismatch"
        print(f"outputs identical; speedup search x{py[0] / cy[0]:.1f}, embed x{py[1] / cy[1]:.1f}")


if __name__ == "__main__":
    main()
