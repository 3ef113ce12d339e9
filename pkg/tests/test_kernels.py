import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra, shortest_path

from confdim import _fallback, kernels

pytestmark = pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")


def _compiled():
    from confdim import _kernels

    return _kernels


def random_graph(rng, n, p):
    A = np.triu(rng.random((n, n)) < p, 1)
    A = A | A.T
    g = csr_matrix(A.astype(np.int8))
    g.sort_indices()
    return g.indptr.astype(np.int32), g.indices.astype(np.int32)


@given(st.integers(2, 40), st.floats(0.02, 0.5), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_bfs_and_nets_agree(n, p, seed):
    rng = np.random.default_rng(seed)
    ip, ix = random_graph(rng, n, p)
    src = np.array([int(rng.integers(n))], dtype=np.int64)
    for k in (-1, 0, 1, 3):
        a = _fallback.bfs_hops(ip, ix, src, k)
        b = _compiled().bfs_hops(ip, ix, src, k)
        assert np.array_equal(np.sort(a[0]), np.sort(b[0]))
        assert dict(zip(a[0].tolist(), a[1].tolist())) == dict(zip(b[0].tolist(), b[1].tolist()))
    order = rng.permutation(n).astype(np.int64)
    seeds = np.empty(0, dtype=np.int64)
    for k in (0, 1, 2):
        assert np.array_equal(_fallback.greedy_net_graph(ip, ix, order, k, seeds),
                              _compiled().greedy_net_graph(ip, ix, order, k, seeds))
    blocked = (rng.random(n) < 0.3).astype(np.int8)
    s = int(rng.integers(n))
    blocked[s] = 0
    assert np.array_equal(_fallback.reach_avoiding(ip, ix, s, blocked), _compiled().reach_avoiding(ip, ix, s, blocked))


@given(st.integers(2, 30), st.floats(0.05, 0.6), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_node_weighted_dijkstra_matches_scipy(n, p, seed):
    rng = np.random.default_rng(seed)
    ip, ix = random_graph(rng, n, p)
    w = rng.random(n)
    source = np.zeros(n, dtype=np.int8)
    source[rng.integers(n)] = 1
    allowed = np.ones(n, dtype=np.int8)
    a = _fallback.node_weighted_dijkstra(ip, ix, w, source, allowed)
    b = _compiled().node_weighted_dijkstra(ip, ix, w, source, allowed)
    assert np.allclose(a, b, equal_nan=True)
    # oracle: node weight moved onto the edge head, plus the source weight
    rows = np.repeat(np.arange(n), np.diff(ip))
    g = csr_matrix((w[ix] + 1e-300, (rows, ix)), shape=(n, n))
    s = int(np.flatnonzero(source)[0])
    ref = dijkstra(g, directed=True, indices=s) + w[s]
    assert np.allclose(np.where(np.isfinite(ref), ref, -1), np.where(np.isfinite(a), a, -1))


@given(st.integers(2, 25), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_floyd_warshall_matches_dijkstra(n, seed):
    rng = np.random.default_rng(seed)
    D = rng.random((n, n)) + 0.01
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0)
    a, b = D.copy(), D.copy()
    _fallback.floyd_warshall(a)
    _compiled().floyd_warshall(b)
    ref = shortest_path(D, method="D", directed=False)
    assert np.allclose(a, ref) and np.allclose(b, ref)


def test_dense_net_and_csbp_step_agree():
    rng = np.random.default_rng(3)
    P = rng.random((60, 2))
    D = np.linalg.norm(P[:, None] - P[None], axis=2)
    order = rng.permutation(60).astype(np.int64)
    seeds = np.array([5], dtype=np.int64)
    assert np.array_equal(_fallback.greedy_net_dense(D, order, 0.2, seeds),
                          _compiled().greedy_net_dense(D, order, 0.2, seeds))
    y = rng.random(100) * 2
    v = rng.random(100) * 0.5 + 0.25
    w = rng.exponential(size=100)
    y1, y2 = y.copy(), y.copy()
    _fallback.csbp_step(y1, v, w, 1e-3, 1.1)
    _compiled().csbp_step(y2, v, w, 1e-3, 1.1)
    assert np.allclose(y1, y2, rtol=1e-13, atol=0)


def test_backend_switch_roundtrip():
    kernels.set_backend("python")
    assert kernels.backend_name() == "python"
    kernels.set_backend("compiled")
    assert kernels.backend_name() == "compiled"
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")
