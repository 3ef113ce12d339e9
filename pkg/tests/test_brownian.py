import heapq

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confdim.brownian import (
    QuadMap,
    contour_tree,
    dzero,
    dzero_matrix,
    hull_boundary_area,
    quotient_metric,
    sample_excursion,
    sample_quadrangulation,
    sample_snake,
)
from confdim.errors import AnchorInsideBall, BackendTooLarge
from confdim.metric import FiniteMetricSpace, GraphMetricSpace


@given(st.integers(1, 200).map(lambda k: 2 * k), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_excursion_endpoints_and_sign(n, seed):
    X = sample_excursion(n, seed).values
    assert len(X) == n + 1
    assert X[0] == 0 and X[-1] == 0 and X.min() >= 0


def test_excursion_deterministic():
    a = sample_excursion(500, 7).values
    b = sample_excursion(500, 7).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_excursion(500, 8).values)


@pytest.mark.parametrize("backend", ["tree", "dense"])
def test_snake_variance_and_covariance(backend):
    X = sample_excursion(40, 3).values
    m = 10_000
    Z = sample_snake(X, seed=5, backend=backend, size=m).values
    assert np.all(Z[:, 0] == 0)
    idx = [5, 13, 20, 27, 34]
    for i in idx:
        v = Z[:, i].var(ddof=1)
        se = X[i] * np.sqrt(2 / (m - 1))
        assert abs(v - X[i]) <= 5 * se + 1e-12
    for s, t in [(5, 20), (13, 34), (20, 27)]:
        c = X[s:t + 1].min()
        cov = np.cov(Z[:, s], Z[:, t])[0, 1]
        se = np.sqrt((X[s] * X[t] + c * c) / m)
        assert abs(cov - c) <= 5 * se


def test_snake_degenerate_and_limits():
    Z = sample_snake(np.zeros(3), seed=0).values
    assert np.all(Z == 0)
    with pytest.raises(BackendTooLarge):
        sample_snake(np.zeros(4002), seed=0, backend="dense")


def _dzero_brute(Z, i, j):
    i, j = sorted((i, j))
    outer = min(Z[k] for k in list(range(0, i + 1)) + list(range(j, len(Z))))
    return Z[i] + Z[j] - 2 * max(min(Z[i:j + 1]), outer)


@given(st.integers(1, 30).map(lambda k: 2 * k), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_dzero_properties(n, seed):
    X = sample_excursion(n, seed).values
    Z = sample_snake(X, seed=seed + 1).values
    M = dzero_matrix(Z)
    amin = int(np.argmin(Z))
    for i in range(0, n + 1, max(1, n // 6)):
        assert dzero(X, Z, i, i) == 0
        assert abs(dzero(X, Z, i, amin) - (Z[i] - Z.min())) < 1e-12
        for j in range(n + 1):
            d = dzero(X, Z, i, j)
            assert d == pytest.approx(dzero(X, Z, j, i), abs=1e-12)
            assert d >= abs(Z[i] - Z[j]) - 1e-12
            assert d == pytest.approx(_dzero_brute(Z, i, j), abs=1e-12)
            if i != j:
                assert M[i, j] == pytest.approx(max(d, 0.0), abs=1e-12)


def _dijkstra(W, s):
    n = len(W)
    dist = np.full(n, np.inf)
    dist[s] = 0
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v in range(n):
            nd = d + W[u, v]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_quotient_matches_shortest_paths(seed):
    n = 40
    X = sample_excursion(n, seed).values
    Z = sample_snake(X, seed=seed + 10).values
    sp = quotient_metric(X, Z)
    tc = sp.time_class
    # oracle: shortest paths over contour times with D0 edges and zero-length gluing of equal tree vertices
    W = dzero_matrix(Z)
    vot = contour_tree(X).vertex_of_time
    W[vot[:, None] == vot[None, :]] = 0.0
    amin = int(np.argmin(Z))
    for s in range(0, n + 1, 5):
        ref = _dijkstra(W, s)
        got = sp.dist[tc[s], tc]
        assert np.allclose(got, ref, atol=1e-9)
    assert np.allclose(sp.dist[sp.anchor, tc], Z - Z.min(), atol=1e-9)
    assert sp.anchor == tc[amin] and sp.root == tc[0]
    assert np.all(sp.dist[tc][:, tc] <= dzero_matrix(Z) + 1e-12)
    assert abs(sp.mass.sum() - 1) < 1e-12
    FiniteMetricSpace(sp.dist, validate=True)


def test_quotient_trivial_excursion():
    X = sample_excursion(2, 0).values
    sp = quotient_metric(X, sample_snake(X, seed=0).values)
    assert sp.n <= 2
    X0 = np.zeros(3)
    sp0 = quotient_metric(X0, np.zeros(3))
    assert sp0.n == 1 and sp0.dist[0, 0] == 0


def _two_color(qm):
    g = qm.graph()
    V = qm.n_vertices
    color = np.full(V, -1)
    color[0] = 0
    stack = [0]
    while stack:
        u = stack.pop()
        for v in g.indices[g.indptr[u]:g.indptr[u + 1]]:
            if color[v] < 0:
                color[v] = 1 - color[u]
                stack.append(v)
            elif color[v] == color[u]:
                return False
    return bool(np.all(color >= 0))


@pytest.mark.parametrize("F,seed", [(1, 0), (2, 1), (5, 2), (50, 3), (300, 4)])
def test_quadrangulation_structure(F, seed):
    qm = sample_quadrangulation(F, seed)
    faces = qm.faces()
    assert qm.n_vertices == F + 2
    assert qm.n_edges == 2 * F
    assert len(faces) == F
    assert all(len(f) == 4 for f in faces)
    assert qm.n_vertices - qm.n_edges + len(faces) == 2
    assert _two_color(qm)
    rd = qm.root_distances()
    assert rd[qm.root_vertex] == 0 and np.all(rd >= 0)


def test_quadrangulation_deterministic_and_roundtrip():
    a = sample_quadrangulation(100, 9)
    b = sample_quadrangulation(100, 9)
    assert a.to_json() == b.to_json()
    c = QuadMap.from_json(a.to_json())
    assert np.array_equal(c.origin, a.origin) and np.array_equal(c.next_cw, a.next_cw)


def test_hull_boundary_area():
    qm = sample_quadrangulation(200, 1)
    g = qm.graph()
    c, a = qm.root_vertex, qm.pointed_vertex
    d = g.distances_from(c)[a]
    with pytest.raises(AnchorInsideBall):
        hull_boundary_area(g, c, a, d, 0.5)
    path = GraphMetricSpace.from_edges(5, [(i, i + 1) for i in range(4)], mass=np.full(5, 0.2))
    assert hull_boundary_area(path, 0, 4, 1.5, 0.4) == 0.0
    assert hull_boundary_area(path, 0, 4, 1.5, 1.0) == pytest.approx(0.2)
    assert hull_boundary_area(g, c, a, 1.5, 1.0) > 0
