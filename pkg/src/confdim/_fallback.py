"""Pure-Python/NumPy versions of the compiled kernels, same signatures and results."""

import heapq

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order


def floyd_warshall(D):
    n = D.shape[0]
    for k in range(n):
        np.minimum(D, D[:, k, None] + D[None, k, :], out=D)


def bfs_hops(indptr, indices, sources, max_hops):
    n = len(indptr) - 1
    hop = np.full(n, -1, dtype=np.int32)
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    frontier = np.asarray(sources, dtype=np.int64)
    hop[frontier] = 0
    visited = [frontier]
    level = 0
    while frontier.size and (max_hops < 0 or level < max_hops):
        starts = indptr[frontier]
        stops = indptr[frontier + 1]
        nbrs = np.concatenate([indices[a:b] for a, b in zip(starts, stops)]) if frontier.size else np.empty(0, np.int32)
        nbrs = nbrs[hop[nbrs] < 0]
        nbrs = np.unique(nbrs).astype(np.int64)
        level += 1
        hop[nbrs] = level
        visited.append(nbrs)
        frontier = nbrs
    visited = np.concatenate(visited)
    return visited, hop[visited].copy()


def greedy_net_graph(indptr, indices, order, cover_hops, seeds):
    n = len(indptr) - 1
    covered = np.zeros(n, dtype=bool)
    selected = []

    def mark(c):
        vis, _ = bfs_hops(indptr, indices, np.array([c], dtype=np.int64), cover_hops)
        covered[vis] = True

    for c in seeds:
        selected.append(int(c))
        mark(c)
    for c in order:
        if covered[c]:
            continue
        selected.append(int(c))
        mark(c)
    return np.asarray(selected, dtype=np.int64)


def greedy_net_dense(D, order, r, seeds):
    n = D.shape[0]
    mind = np.full(n, np.inf)
    selected = []
    for c in seeds:
        selected.append(int(c))
        np.minimum(mind, D[c], out=mind)
    for c in order:
        if mind[c] < r:
            continue
        selected.append(int(c))
        np.minimum(mind, D[c], out=mind)
    return np.asarray(selected, dtype=np.int64)


def reach_avoiding(indptr, indices, start, blocked):
    n = len(indptr) - 1
    blocked = np.asarray(blocked, dtype=bool)
    seen = np.zeros(n, dtype=bool)
    if blocked[start]:
        return seen
    keep = ~blocked
    g = csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
    g = g[keep][:, keep]
    local = np.cumsum(keep) - 1
    order = breadth_first_order(g, local[start], directed=True, return_predecessors=False)
    seen[np.flatnonzero(keep)[order]] = True
    return seen


def node_weighted_dijkstra(indptr, indices, weight, source, allowed):
    n = len(indptr) - 1
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    heap = []
    for u in np.flatnonzero(np.asarray(source, bool) & np.asarray(allowed, bool)):
        dist[u] = weight[u]
        heap.append((weight[u], int(u)))
    heapq.heapify(heap)
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in indices[indptr[u]:indptr[u + 1]]:
            if not allowed[v] or done[v]:
                continue
            cand = du + weight[v]
            if cand < dist[v]:
                dist[v] = cand
                heapq.heappush(heap, (cand, int(v)))
    return dist


_A = 1.5
_TPA = np.tan(np.pi * _A / 2)
_B = np.arctan(_TPA) / _A
_S = (1 + _TPA**2) ** (1 / (2 * _A))


def csbp_step(y, v, w, dt, scale):
    alive = y > 0
    va, wa, ya = v[alive], w[alive], y[alive]
    x = _S * np.sin(_A * (va + _B)) / np.cos(va) ** (1 / _A) * (np.cos(va - _A * (va + _B)) / wa) ** ((1 - _A) / _A)
    ya = ya + (ya * dt) ** (1 / _A) * scale * x
    y[alive] = np.maximum(ya, 0.0)
