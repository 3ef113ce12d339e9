"""Time each kernel on the compiled and the pure-Python backend and check they agree.

    python benchmarks/bench_kernels.py [--repeat 3] [--size small|medium]
"""

import argparse
import timeit

import numpy as np

from confdim import kernels
from confdim.brownian import sample_quadrangulation

SIZES = {"small": dict(dense=150, faces=2000, paths=20_000), "medium": dict(dense=400, faces=20_000, paths=200_000)}


def hop_map(visited, hops, n):
    # visit order may differ between backends; the hop count per vertex may not
    out = np.full(n, -1)
    out[visited] = hops
    return out


def _cases(size, rng):
    s = SIZES[size]
    pts = rng.random((s["dense"], 2))
    D0 = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    g = sample_quadrangulation(s["faces"], seed=1).graph()
    indptr, indices = g.indptr, g.indices
    n = len(indptr) - 1
    order = rng.permutation(n)
    weight = rng.random(n)
    source = np.zeros(n, dtype=np.int8)
    source[:5] = 1
    allowed = np.ones(n, dtype=np.int8)
    blocked = (rng.random(n) < 0.2).astype(np.int8)
    blocked[0] = 0
    v = rng.uniform(-np.pi / 2, np.pi / 2, s["paths"])
    w = rng.exponential(size=s["paths"])

    def step():
        y = np.ones(s["paths"])
        kernels.csbp_step(y, v, w, 1e-3, 0.5)
        return y

    return {
        "floyd_warshall": lambda: kernels.floyd_warshall(D0.copy()),
        "bfs_hops": lambda: hop_map(*kernels.bfs_hops(indptr, indices, [0]), n),
        "greedy_net_graph": lambda: kernels.greedy_net_graph(indptr, indices, order, 3),
        "greedy_net_dense": lambda: kernels.greedy_net_dense(D0, np.arange(len(D0)), 0.05),
        "reach_avoiding": lambda: kernels.reach_avoiding(indptr, indices, 0, blocked),
        "node_weighted_dijkstra": lambda: kernels.node_weighted_dijkstra(indptr, indices, weight, source, allowed),
        "csbp_step": step,
    }


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=1e-12, equal_nan=True)
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", choices=sorted(SIZES), default="small")
    args = ap.parse_args()
    backends = kernels.available()
    print(f"backends: {', '.join(backends)}; size={args.size}")
    print(f"{'kernel':<24}" + "".join(f"{b + ' [ms]':>16}" for b in backends) + f"{'speedup':>10}{'agree':>8}")
    for name in _cases(args.size, np.random.default_rng(0)):
        times, outs = {}, {}
        for b in backends:
            kernels.set_backend(b)
            fn = _cases(args.size, np.random.default_rng(0))[name]
            outs[b] = fn()
            times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        agree = _same(*outs.values()) if len(outs) == 2 else True
        print(f"{name:<24}" + "".join(f"{times[b]:>16.2f}" for b in backends) + f"{speed:>10.1f}{str(agree):>8}")
    kernels.set_backend(backends[0])


if __name__ == "__main__":
    main()
