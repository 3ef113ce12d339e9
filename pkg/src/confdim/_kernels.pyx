# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Every function here has a pure-Python twin in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, pow, atan, tan, M_PI
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair

cnp.import_array()


def floyd_warshall(double[:, ::1] D):
    """In-place min-plus closure of a dense nonnegative matrix."""
    cdef Py_ssize_t n = D.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double dik, cand
    with nogil:
        for k in range(n):
            for i in range(n):
                dik = D[i, k]
                for j in range(n):
                    cand = dik + D[k, j]
                    if cand < D[i, j]:
                        D[i, j] = cand


def bfs_hops(const int[::1] indptr, const int[::1] indices, const long[::1] sources, long max_hops):
    """Multi-source BFS truncated at ``max_hops`` (negative = unlimited).

    Returns (visited, hops) in BFS order.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef int[::1] hop = np.full(n, -1, dtype=np.int32)
    cdef long[::1] queue = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t head = 0, tail = 0, s, e
    cdef long u, v
    cdef int hu
    for s in range(sources.shape[0]):
        u = sources[s]
        if hop[u] < 0:
            hop[u] = 0
            queue[tail] = u
            tail += 1
    with nogil:
        while head < tail:
            u = queue[head]
            head += 1
            hu = hop[u]
            if max_hops >= 0 and hu >= max_hops:
                continue
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if hop[v] < 0:
                    hop[v] = hu + 1
                    queue[tail] = v
                    tail += 1
    visited = np.asarray(queue[:tail]).copy()
    return visited, np.asarray(hop)[visited].copy()


def greedy_net_graph(const int[::1] indptr, const int[::1] indices, const long[::1] order,
                     long cover_hops, const long[::1] seeds):
    """Greedy separated set on a graph metric: a point joins if it lies more than
    ``cover_hops`` hops from every selected point. Seeds are selected first."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef int[::1] hop = np.full(n, -1, dtype=np.int32)
    cdef long[::1] touched = np.empty(n, dtype=np.int64)
    cdef char[::1] covered = np.zeros(n, dtype=np.int8)
    cdef long[::1] queue = np.empty(n, dtype=np.int64)
    cdef list selected = []
    cdef Py_ssize_t idx, head, tail, ntouched, e, t
    cdef long c, u, v
    cdef int hu
    cdef Py_ssize_t nseeds = seeds.shape[0]
    for idx in range(nseeds + order.shape[0]):
        if idx < nseeds:
            c = seeds[idx]
        else:
            c = order[idx - nseeds]
            if covered[c]:
                continue
        selected.append(c)
        with nogil:
            head = 0
            tail = 1
            queue[0] = c
            hop[c] = 0
            ntouched = 1
            touched[0] = c
            covered[c] = 1
            while head < tail:
                u = queue[head]
                head += 1
                hu = hop[u]
                if hu >= cover_hops:
                    continue
                for e in range(indptr[u], indptr[u + 1]):
                    v = indices[e]
                    if hop[v] < 0:
                        hop[v] = hu + 1
                        covered[v] = 1
                        queue[tail] = v
                        tail += 1
                        touched[ntouched] = v
                        ntouched += 1
            for t in range(ntouched):
                hop[touched[t]] = -1
    return np.asarray(selected, dtype=np.int64)


def greedy_net_dense(const double[:, ::1] D, const long[::1] order, double r, const long[::1] seeds):
    """Greedy separated set on a dense metric: a point joins if its distance to
    every selected point is at least ``r``. Seeds are selected first."""
    cdef Py_ssize_t n = D.shape[0]
    cdef double[::1] mind = np.full(n, np.inf)
    cdef list selected = []
    cdef Py_ssize_t idx, j
    cdef long c
    cdef Py_ssize_t nseeds = seeds.shape[0]
    for idx in range(nseeds + order.shape[0]):
        if idx < nseeds:
            c = seeds[idx]
        else:
            c = order[idx - nseeds]
            if mind[c] < r:
                continue
        selected.append(c)
        with nogil:
            for j in range(n):
                if D[c, j] < mind[j]:
                    mind[j] = D[c, j]
    return np.asarray(selected, dtype=np.int64)


def reach_avoiding(const int[::1] indptr, const int[::1] indices, long start, const char[::1] blocked):
    """Mask of vertices reachable from ``start`` without entering ``blocked``."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef char[::1] seen = np.zeros(n, dtype=np.int8)
    cdef long[::1] stack = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t top = 0, e
    cdef long u, v
    if blocked[start]:
        return np.asarray(seen).astype(bool)
    seen[start] = 1
    stack[0] = start
    top = 1
    with nogil:
        while top > 0:
            top -= 1
            u = stack[top]
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if not seen[v] and not blocked[v]:
                    seen[v] = 1
                    stack[top] = v
                    top += 1
    return np.asarray(seen).astype(bool)


def node_weighted_dijkstra(const int[::1] indptr, const int[::1] indices, const double[::1] weight,
                           const char[::1] source, const char[::1] allowed):
    """Least total node weight of a path from any source to each vertex (both ends counted).

    Only ``allowed`` vertices may be used. Unreachable vertices get +inf.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef double[::1] dist = np.full(n, np.inf)
    cdef char[::1] done = np.zeros(n, dtype=np.int8)
    cdef priority_queue[pair[double, long]] heap
    cdef Py_ssize_t u, e
    cdef long v
    cdef double du, cand
    cdef pair[double, long] top
    for u in range(n):
        if source[u] and allowed[u]:
            dist[u] = weight[u]
            heap.push(pair[double, long](-weight[u], u))
    with nogil:
        while not heap.empty():
            top = heap.top()
            heap.pop()
            u = top.second
            if done[u]:
                continue
            done[u] = 1
            du = dist[u]
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if not allowed[v] or done[v]:
                    continue
                cand = du + weight[v]
                if cand < dist[v]:
                    dist[v] = cand
                    heap.push(pair[double, long](-cand, v))
    return np.asarray(dist)


def csbp_step(double[::1] y, const double[::1] v, const double[::1] w, double dt, double scale):
    """One Euler-Lamperti step of a 3/2-stable CSBP, in place.

    ``v`` ~ U(-pi/2, pi/2), ``w`` ~ Exp(1) drive the Chambers-Mallows-Stuck draw of a
    totally skewed stable variable; ``scale`` maps it to the target Laplace exponent.
    """
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double a = 1.5
    cdef double tpa = tan(M_PI * a / 2.0)
    cdef double b = atan(tpa) / a
    cdef double s = pow(1.0 + tpa * tpa, 1.0 / (2.0 * a))
    cdef double x, yi, vi
    with nogil:
        for i in range(n):
            yi = y[i]
            if yi <= 0.0:
                continue
            vi = v[i]
            x = s * sin(a * (vi + b)) / pow(cos(vi), 1.0 / a) * pow(cos(vi - a * (vi + b)) / w[i], (1.0 - a) / a)
            yi = yi + pow(yi * dt, 1.0 / a) * scale * x
            if yi <= 0.0:
                yi = 0.0
            y[i] = yi
