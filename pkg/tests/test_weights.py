import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confdim.brownian import sample_quadrangulation
from confdim.errors import BadEpsilon, IdenticalPoints, MissingEmbedding, ScaleTooCoarse
from confdim.filling import FillingGraph, build_filling
from confdim.metric import FiniteMetricSpace, GraphMetricSpace, build_nets, normalize_diameter
from confdim.planar import PlanarEmbedding, tutte_embed
from confdim.weights import (
    EmbeddedGeometry,
    WeightState,
    admissibility_margin,
    all_margins,
    boundary_metric,
    check_F_event,
    check_H_axioms,
    choose_parents,
    compute_nu_mu,
    crossing_sets,
    default_sigma,
    pi_of_pair,
    regularize_pi,
    repair_sigma,
    varsigma_varpi,
    vertex_pair_pi,
)
from conftest import snake_filling

A = 0.125


def _pairs(edges):
    if not edges:
        return (np.empty(0, np.int64), np.empty(0, np.int64))
    e = np.asarray(edges, dtype=np.int64)
    return e[:, 0].copy(), e[:, 1].copy()


def _toy(coords, sizes, horizontal):
    """Hand-built filling on 1-D points; vertical edges follow the open-ball rule."""
    X = np.asarray(coords, dtype=np.float64)[:, None]
    sp = FiniteMetricSpace(np.abs(X - X.T))
    D = sp.dist
    vertical = []
    for n in range(len(sizes) - 1):
        i, j = np.nonzero(D[: sizes[n], : sizes[n + 1]] < A**n + A ** (n + 1))
        vertical.append((i.astype(np.int64), j.astype(np.int64)))
    return FillingGraph(A, np.arange(len(X)), np.asarray(sizes), D, [_pairs(h) for h in horizontal], vertical, sp)


def _chain_toy():
    # level 2 is the path 0 - 0.1 - 0.2 - 0.3; crossings start in {0, 0.1} and end at 0.3
    return _toy([0.0, 0.1, 0.2, 0.3], [1, 1, 4], [[], [], [(0, 1), (1, 2), (2, 3)]])


def _two_route_toy():
    # level-2 positions: r=0, s=0.1, a=0.2, b=0.19, t=0.3
    return _toy([0.0, 0.1, 0.2, 0.19, 0.3], [1, 1, 5], [[], [], [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4)]])


def _min_chain_oracle(f, sigma, n, y):
    """Exhaustive enumeration of simple horizontal paths from the start set to the end set."""
    S, T = crossing_sets(f, n)
    adj = f.horizontal_csr(n).toarray() > 0
    w = sigma[f.level_vertices(n)]
    best = np.inf
    stack = [(s, (s,), w[s]) for s in np.flatnonzero(S[y])]
    while stack:
        v, path, tot = stack.pop()
        if T[y, v]:
            best = min(best, tot)
        for u in np.flatnonzero(adj[v]):
            if u not in path:
                stack.append((u, path + (u,), tot + w[u]))
    return best


def _sigma(f, level_values, fill=1.0):
    s = np.full(f.n_vertices, fill)
    s[0] = np.nan
    for n, vals in level_values.items():
        s[f.level_vertices(n)] = vals
    return s


def test_crossing_sets_on_chain():
    S, T = crossing_sets(_chain_toy(), 2)
    assert S[0].tolist() == [True, True, False, False]
    assert T[0].tolist() == [False, False, False, True]


def test_margin_examples():
    f = _chain_toy()
    s = _sigma(f, {2: np.full(4, 1 / 3)})
    assert admissibility_margin(f, s, 1) == pytest.approx(1.0)
    assert _min_chain_oracle(f, s, 2, 0) == pytest.approx(1.0)
    assert admissibility_margin(f, _sigma(f, {2: np.zeros(4)}), 1) == 0.0
    g = _two_route_toy()
    s = _sigma(g, {2: [0.5, 0.2, 0.3, 0.9, 0.2]})
    assert _min_chain_oracle(g, s, 2, 0) == pytest.approx(0.7)
    assert admissibility_margin(g, s, 1) == pytest.approx(0.7)


def test_margin_infinite_without_crossing():
    f = _chain_toy()
    assert admissibility_margin(f, _sigma(f, {}), 0) == np.inf


def test_repair_examples():
    f = _chain_toy()
    ok = _sigma(f, {2: np.ones(4)})
    out, rep = repair_sigma(f, ok)
    assert np.array_equal(out[1:], ok[1:]) and all(r["factor"] == 1 for r in rep)
    half = _sigma(f, {2: np.full(4, 1 / 6)})
    out, rep = repair_sigma(f, half)
    assert rep[-1]["factor"] == pytest.approx(2.0)
    assert np.allclose(out[f.level_vertices(2)], 1 / 3)
    zero = _sigma(f, {2: np.zeros(4)})
    out, rep = repair_sigma(f, zero)
    assert rep[-1]["raised"] >= 1 and rep[-1]["admissible"]
    assert admissibility_margin(f, out, 1) >= 1 - 1e-12


def test_repair_makes_generated_fillings_admissible(small_filling):
    f = small_filling
    rng = np.random.default_rng(1)
    s = rng.uniform(0, 0.2, f.n_vertices)
    s[0] = np.nan
    out, rep = repair_sigma(f, s)
    for m in all_margins(f, out):
        assert np.all(m >= 1 - 1e-12)
    assert all(r["admissible"] for r in rep)


def test_nu_mu_examples():
    f = _toy([0.0, 0.1, 0.2, 0.3], [1, 1, 4], [[], [], [(0, 1), (1, 2)]])
    s = _sigma(f, {1: [0.05], 2: [0.1, 0.2, 0.3, 0.9]})
    nu, mu = compute_nu_mu(f, s, 0.01)
    assert np.allclose(nu[f.level_vertices(2)], [0.6, 0.6, 0.6, 1.8])
    assert nu[1] == pytest.approx(0.1)
    assert mu[f.level_vertices(2)][-1] == pytest.approx(0.99)
    nu0, mu0 = compute_nu_mu(f, _sigma(f, {1: [0.0], 2: np.zeros(4)}), 0.05)
    assert np.all(nu0[1:] == 0) and np.all(mu0[1:] == 0.05)
    assert np.all(mu[1:] == np.maximum(0.01, np.minimum(nu[1:], 0.99)))


def test_parents():
    f = _toy([0.0, 0.06, 0.03], [1, 2, 3], [[], [(0, 1)], [(0, 1), (0, 2), (1, 2)]])
    parent, rep = choose_parents(f)
    o = f.offsets
    assert parent[o[2] + 0] == o[1] + 0 and parent[o[2] + 1] == o[1] + 1
    # the point at 0.03 is equidistant from both level-1 points
    assert parent[o[2] + 2] == o[1] + 0


def test_parents_on_generated(small_filling):
    parent, rep = choose_parents(small_filling)
    assert rep["within_radius"] and rep["non_adjacent"] == 0
    lv = small_filling.level_of()
    assert np.all(lv[parent[1:]] == lv[1:] - 1)


def _regularize_toy():
    f = _toy([0.0, 0.5], [1, 2, 2], [[], [(0, 1)], [(0, 1)]])
    parent, _ = choose_parents(f)
    mu = np.array([np.nan, 0.9, 0.1, 0.9, 0.1])
    return f, parent, mu


def test_regularize_hand_trace():
    f, parent, mu = _regularize_toy()
    lp, lpp, rho = regularize_pi(f, mu, parent, 0.1)
    pi, pip = np.exp(lp), np.exp(lpp)
    assert np.allclose(pi[1:3], [0.9, 0.1])
    assert np.allclose(pip[3:], [0.81, 0.01])
    assert pi[3] == pytest.approx(0.81) and pi[4] == pytest.approx(0.081)
    assert pi[4] / pi[3] == pytest.approx(0.1)
    assert np.allclose(lp[1:], lp[parent[1:]] + np.log(rho[1:]))


def test_regularize_equal_mu_is_identity(small_filling):
    f = small_filling
    parent, _ = choose_parents(f)
    mu = np.full(f.n_vertices, 0.7)
    lp, lpp, _ = regularize_pi(f, mu, parent, 0.01)
    assert np.array_equal(lp, lpp)
    assert np.allclose(lp, np.log(0.7) * f.level_of())


def _state(f, sigma, eta=0.01, zeta=0.1):
    sigma, _ = repair_sigma(f, sigma)
    nu, mu = compute_nu_mu(f, sigma, eta)
    parent, _ = choose_parents(f)
    lp, lpp, rho = regularize_pi(f, mu, parent, eta)
    return WeightState(eta, zeta, sigma=sigma, nu=nu, mu=mu, parent=parent, log_pi=lp, log_pi_prime=lpp, rho=rho)


def _no_chains(f, lpp, eta):
    le = -np.log(eta)
    for n in range(1, f.n_max + 1):
        q = lpp[f.level_vertices(n)]
        a, b = f.horizontal[n]
        dom = set()
        for x, y in zip(a, b):
            if q[x] - q[y] > le:
                dom.add((x, y))
            if q[y] - q[x] > le:
                dom.add((y, x))
        heads = {x for x, _ in dom}
        assert not any(y in heads for _, y in dom)


@given(st.integers(0, 10**6), st.sampled_from([0.01, 0.1, 0.3]))
@settings(max_examples=12, deadline=None)
def test_random_mu_satisfies_axioms(seed, eta):
    f = snake_filling(240, seed % 50, n_max=3)
    rng = np.random.default_rng(seed)
    parent, _ = choose_parents(f)
    mu = rng.uniform(eta, 1 - eta, f.n_vertices) ** rng.uniform(1, 4)
    mu = np.clip(mu, eta, 1 - eta)
    lp, lpp, rho = regularize_pi(f, mu, parent, eta)
    _no_chains(f, lpp, eta)
    st_ = WeightState(eta, 0.1, mu=mu, parent=parent, log_pi=lp, log_pi_prime=lpp, rho=rho)
    rep = check_H_axioms(f, st_, n_paths=50, seed=seed)
    assert rep["h1_violations"] == 0 and rep["h2_violations"] == 0
    assert np.all(lp <= f.level_of() * np.log(1 - eta) + 1e-12)


@pytest.fixture(scope="module")
def snake_state(small_filling):
    ws = default_sigma(small_filling, strategy="metric_only")
    return _state(small_filling, ws.sigma)


def test_default_sigma_metric_only_event_fails_everywhere(small_filling):
    ws = default_sigma(small_filling, strategy="metric_only")
    # at alpha = 1/8 the band window is empty, so every event fails and sigma is one
    assert np.all(ws.sigma[1:] == 1.0)
    assert ws.log["event_failed"] == small_filling.n_vertices - 1
    with pytest.raises(MissingEmbedding):
        default_sigma(small_filling, strategy="ratio")


def test_h_axioms_on_pipeline_state(small_filling, snake_state):
    rep = check_H_axioms(small_filling, snake_state, n_paths=1000, seed=0)
    assert rep["h1_violations"] == 0 and rep["h2_violations"] == 0
    assert 0 < rep["h3_min_ratio"] < np.inf
    lv = small_filling.level_of()
    assert np.all(snake_state.log_pi <= lv * np.log(1 - snake_state.eta) + 1e-12)


def test_h3_on_vertical_path(small_filling, snake_state):
    f, s = small_filling, snake_state
    u = f.n_vertices - 1
    path = [u]
    while path[-1] != 0:
        path.append(int(s.parent[path[-1]]))
    lpair, _ = vertex_pair_pi(f, s, path[0], path[-1])
    assert np.exp(s.log_pi[path]).sum() / np.exp(lpair) >= 1


def _line_state():
    X = np.linspace(0, 0.99, 600)[:, None]
    sp = FiniteMetricSpace(np.abs(X - X.T))
    f = build_filling(sp, build_nets(sp, A, 3))
    s = np.full(f.n_vertices, 0.3)
    s[0] = np.nan
    return f, _state(f, s)


def test_pi_of_pair_examples():
    f, s = _line_state()
    deep = f.points
    x = int(deep[len(deep) // 2])
    n, c, lp = pi_of_pair(f, s, x, x + 1)
    assert n == f.n_max
    n0, c0, lp0 = pi_of_pair(f, s, 0, 599)
    assert n0 == 0 and c0.tolist() == [0] and lp0 == 0.0
    with pytest.raises(IdenticalPoints):
        pi_of_pair(f, s, 3, 3)
    rng = np.random.default_rng(0)
    D = f.space.dist
    for x, y in rng.integers(0, 600, size=(40, 2)):
        if x == y:
            continue
        # brute-force witness scan over all levels
        best_n, wit = 0, [0]
        for m in range(f.n_max + 1):
            pts = f.level_points(m)
            w = [k for k, z in enumerate(pts) if D[z, x] < 2 * A**m and D[z, y] < 2 * A**m]
            if w:
                best_n, wit = m, [f.offsets[m] + k for k in w]
        n, c, lp = pi_of_pair(f, s, x, y)
        assert n == best_n and sorted(c.tolist()) == sorted(wit)
        assert all(lp >= s.log_pi[v] for v in wit)


@pytest.mark.parametrize("method", ["pi_comparator", "graph_path_lower", "graph_path_upper"])
def test_boundary_metric_properties(small_filling, snake_state, method):
    bm = boundary_metric(small_filling, snake_state, 0.5, method)
    V = bm.values
    off = ~np.eye(len(V), dtype=bool)
    assert np.allclose(V, V.T) and np.all(np.diag(V) == 0) and np.all(V[off] > 0)


def test_boundary_metric_relations(small_filling, snake_state):
    f, s = small_filling, snake_state
    cmp1 = boundary_metric(f, s, 1.0, "pi_comparator").values
    rng = np.random.default_rng(2)
    K = len(cmp1)
    for i, j in rng.integers(0, K, size=(50, 2)):
        if i != j:
            _, _, lp = pi_of_pair(f, s, f.points[i], f.points[j])
            assert cmp1[i, j] == pytest.approx(np.exp(lp))
    lo = boundary_metric(f, s, 1.0, "graph_path_lower").values
    hi = boundary_metric(f, s, 1.0, "graph_path_upper").values
    assert np.all(lo <= hi + 1e-12)
    off = ~np.eye(K, dtype=bool)
    ratio = hi[off] / cmp1[off]
    assert np.all(np.isfinite(ratio)) and ratio.min() > 0
    with pytest.raises(BadEpsilon):
        boundary_metric(f, s, 0.0)
    with pytest.raises(BadEpsilon):
        boundary_metric(f, s, 1.5)


def _polar(k=64, R=10):
    n = 1 + k * R
    idx = lambda j, i: 0 if j == 0 else 1 + (j - 1) * k + i % k
    coords = np.zeros((n, 2))
    th = 2 * np.pi * np.arange(k) / k
    for j in range(1, R + 1):
        coords[1 + (j - 1) * k: 1 + j * k] = np.c_[j * np.cos(th), j * np.sin(th)]
    faces = [[0, idx(1, i), idx(1, i + 1)] for i in range(k)]
    faces += [[idx(j, i), idx(j + 1, i), idx(j + 1, i + 1), idx(j, i + 1)] for j in range(1, R) for i in range(k)]
    edges = {tuple(sorted((p[m], p[(m + 1) % len(p)]))) for p in faces for m in range(len(p))}
    return coords, faces, sorted(edges), idx(R, 0)


def test_sigma_concentric_toy():
    k, R = 64, 10
    coords, faces, edges, anchor = _polar(k, R)
    s = 0.99 / (2 * R)
    g = GraphMetricSpace.from_edges(len(coords), edges, scale=s, anchor=anchor)
    f = build_filling(g, build_nets(g, A, 2))
    geom = EmbeddedGeometry(g, PlanarEmbedding.from_polygons(coords, faces), anchor=anchor)
    ws = default_sigma(f, geom, strategy="ratio")
    hops = lambda r: int(np.ceil(r / s) - 1)
    # hand geometry: the ball is the disc of rings <= J, the filled region's faces reach ring J'+1
    d = 2 * hops(4 * A**2)
    r = (hops(A ** 1.1) + 1) * np.cos(np.pi / k)
    assert ws.sigma[f.offsets[2]] == pytest.approx(min(d / r, 1.0))
    # level 1: the filled ball would swallow the anchor, so the weight falls back to one
    assert ws.sigma[f.offsets[1]] == 1.0 and ws.log["anchor_inside"] >= 1
    assert np.all((ws.sigma[1:] > 0) & (ws.sigma[1:] <= 1))


def _grid(m, h):
    n = m * m
    edges = [(i * m + j, i * m + j + 1) for i in range(m) for j in range(m - 1)]
    edges += [(i * m + j, (i + 1) * m + j) for i in range(m - 1) for j in range(m)]
    return GraphMetricSpace.from_edges(n, edges, scale=h, anchor=0)


def test_F_event_fat_grid_and_path():
    alpha, zeta = 0.005, 0.9
    g = _grid(61, 1 / 120)
    center = 30 * 61 + 30
    assert check_F_event(g, center, 1, alpha, zeta)
    path = GraphMetricSpace.from_edges(400, [(i, i + 1) for i in range(399)], scale=1 / 400, anchor=399)
    assert not check_F_event(path, 0, 1, alpha, zeta)
    coarse = GraphMetricSpace.from_edges(20, [(i, i + 1) for i in range(19)], scale=0.05, anchor=19)
    with pytest.raises(ScaleTooCoarse):
        check_F_event(coarse, 0, 1, alpha, zeta)
    # the default scales leave no room for a band, so the event fails
    assert not check_F_event(g, center, 1, A, 0.1)


def test_F_event_grid_brute_force_oracle():
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components
    from confdim.metric import filled_ball

    alpha, zeta = 0.005, 0.9
    g = _grid(61, 1 / 120)
    x = 30 * 61 + 30
    w = 8 * alpha ** zeta
    t = alpha**0 / 8
    dx = g.distances_from(x)
    inner = np.zeros(g.n, bool)
    inner[filled_ball(g, x, t, 0)] = True
    outer = np.zeros(g.n, bool)
    outer[filled_ball(g, x, t + w, 0)] = True
    band = outer & ~inner
    adj = csr_matrix((np.ones(len(g.indices)), g.indices, g.indptr), shape=(g.n, g.n))
    nb_in = (adj @ inner.astype(float)) > 0
    nb_out = (adj @ (~outer).astype(float)) > 0
    I, O = band & nb_in, band & nb_out
    # every middle-third point, not a sample
    for z in np.flatnonzero(band & (dx >= t + w / 3) & (dx < t + 2 * w / 3)):
        keep = band & ~g.within(int(z), w / 8)
        sub = adj[keep][:, keep]
        _, lab = connected_components(sub, directed=False)
        li = set(lab[I[keep]].tolist())
        assert any(l in li for l in lab[O[keep]])


@pytest.fixture(scope="module")
def quad_setup():
    qm = sample_quadrangulation(150, seed=2)
    g0 = qm.graph()
    g, _ = normalize_diameter(g0)
    f = build_filling(g, build_nets(g, A, 3, "mass", seed=0))
    vstar = qm.pointed_vertex
    geom = EmbeddedGeometry(g, tutte_embed(qm, 0), anchor=vstar)
    return f, geom


def test_varsigma_varpi(quad_setup):
    f, geom = quad_setup
    ws = default_sigma(f, geom, strategy="ratio_with_event")
    st_ = _state(f, ws.sigma)
    st_.event = ws.event
    vs, lw, rep = varsigma_varpi(f, geom, st_)
    assert np.all(vs[1:][~ws.event[1:]] == 1.0)
    assert np.allclose(lw[1:], lw[st_.parent[1:]] + np.log(vs[1:]))
    assert rep["violations"] == 0
    with pytest.raises(MissingEmbedding):
        varsigma_varpi(f, None, st_)


class _WideAnnulus:
    """Stub geometry whose annuli have an enormous radius ratio."""

    graph = None

    def vertex(self, x):
        return int(x)

    def filled(self, v, r):
        return r

    def shape(self, v, region):
        return 0.0, region * 1e9, region


def test_varsigma_large_modulus_limit(quad_setup):
    f, _ = quad_setup
    eta = 0.05
    st_ = _state(f, _sigma(f, {}), eta=eta)
    st_.event = np.ones(f.n_vertices, dtype=bool)
    vs, _, _ = varsigma_varpi(f, _WideAnnulus(), st_)
    assert np.allclose(vs[1:], eta, atol=1e-5)
