"""Vertex weights on a filling: sigma, admissibility repair, nu/mu, parent tree, the
level-by-level pi regularization, axiom checks and the deformed boundary metric.

All products of weights are kept as logarithms so tiny clamp values stay representable.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, identity
from scipy.sparse.csgraph import connected_components, dijkstra

from . import kernels
from .errors import (
    AnchorInsideBall,
    AxiomViolation,
    BadEpsilon,
    H1Violation,
    H2Violation,
    IdenticalPoints,
    InvalidParameter,
    MissingEmbedding,
    ScaleTooCoarse,
    ZeroInradius,
    ZeroMargin,
)
from .metric import filled_ball
from .planar import _diameter, modulus_from_ratio, shape_stats

STRATEGIES = ("ratio", "ratio_with_event", "metric_only")
MARGIN_TOL = 1e-12
LOG_TOL = 1e-12
MAX_EVENT_T = 64


@dataclass
class WeightState:
    eta: float
    zeta: float
    sigma: np.ndarray = None
    event: np.ndarray = None
    nu: np.ndarray = None
    mu: np.ndarray = None
    parent: np.ndarray = None
    log_pi: np.ndarray = None
    log_pi_prime: np.ndarray = None
    rho: np.ndarray = None
    varsigma: np.ndarray = None
    log_varpi: np.ndarray = None
    log: dict = field(default_factory=dict)

    def rows(self, filling):
        lv, pts = filling.level_of(), filling.point_of()
        N = filling.n_vertices

        def col(a):
            return np.full(N, np.nan) if a is None else np.asarray(a, dtype=np.float64)

        cols = [col(a) for a in (self.sigma, self.nu, self.mu, self.log_pi, self.rho, self.varsigma, self.log_varpi)]
        return [(int(lv[v]), int(pts[v]), *[float(c[v]) for c in cols]) for v in range(N)]

    def write_csv(self, filling, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "id", "sigma", "nu", "mu", "log_pi", "rho", "varsigma", "log_varpi"])
            w.writerows(self.rows(filling))


def _check_eta(eta):
    if not 0 < eta < 0.5:
        raise InvalidParameter(f"eta must lie in (0, 1/2), got {eta}")


def _check_zeta(zeta):
    if not 0 < zeta < 1:
        raise InvalidParameter(f"zeta must lie in (0, 1), got {zeta}")


# geometry -------------------------------------------------------------------------------


class EmbeddedGeometry:
    """Euclidean statistics of metric balls of a graph drawn in the plane.

    ``vertex_of`` maps points of the filling's space to graph vertices (identity when the
    filling is built on the graph itself). Radii are in the graph's own (rescaled) units.
    """

    def __init__(self, graph, embedding, vertex_of=None, anchor=None):
        self.graph = graph
        self.embedding = embedding
        self.vertex_of = None if vertex_of is None else np.asarray(vertex_of, dtype=np.int64)
        self.anchor = graph.anchor if anchor is None else int(anchor)

    def vertex(self, x):
        return int(x) if self.vertex_of is None else int(self.vertex_of[x])

    def ball(self, v, r):
        return self.graph.ball(v, r)

    def filled(self, v, r):
        return filled_ball(self.graph, v, r, self.anchor)

    def diam(self, vertices):
        return _diameter(self.embedding.coords[np.asarray(vertices, dtype=np.int64)])

    def shape(self, v, vertices):
        return shape_stats(self.embedding, vertices, v)


# event proxy ----------------------------------------------------------------------------


def _components_meet(indptr, indices, allowed, A_mask, B_mask):
    idx = np.flatnonzero(allowed)
    if idx.size == 0:
        return False
    pos = np.full(len(allowed), -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    rows = np.repeat(np.arange(len(allowed)), np.diff(indptr))
    keep = allowed[rows] & allowed[indices]
    g = csr_matrix((np.ones(int(keep.sum()), dtype=np.int8), (pos[rows[keep]], pos[indices[keep]])),
                   shape=(idx.size, idx.size))
    _, lab = connected_components(g, directed=False)
    la = set(lab[pos[np.flatnonzero(A_mask & allowed)]].tolist())
    lb = lab[pos[np.flatnonzero(B_mask & allowed)]]
    return any(int(x) in la for x in lb)


def check_F_event(space, x, n, alpha, zeta, anchor=None, max_centers=None):
    """Discrete proxy for the good-band event at (x, n).

    Scans inner radii t over [a^(n-1)/8, a^(n-1)/4 - w] with band width w = 8 a^(n-1+zeta).
    A band (filled ball difference) is good when, for every sampled centre z in its middle
    third, removing the ball of radius w/8 about z leaves inner and outer band boundary
    connected inside the band.
    """
    _check_zeta(zeta)
    if n < 1:
        raise InvalidParameter("the event is defined for levels n >= 1")
    w = 8 * alpha ** (n - 1 + zeta)
    h = space.h
    if w < 3 * h:
        raise ScaleTooCoarse(f"band width {w:.3g} is below 3h = {3 * h:.3g}", witness={"w": w, "h": h})
    lo, hi = alpha ** (n - 1) / 8, alpha ** (n - 1) / 4 - w
    if hi < lo:
        return False
    anchor = space.anchor if anchor is None else int(anchor)
    if anchor is None:
        raise InvalidParameter("the event needs an anchor point")
    indptr, indices = space.proximity()
    indptr = np.asarray(indptr)
    indices = np.asarray(indices)
    dx = np.asarray(space.distances_from(int(x)), dtype=np.float64)
    if dx[anchor] < hi + w:
        return False
    k = min(MAX_EVENT_T, int((hi - lo) / h) + 1)
    deg_rows = np.repeat(np.arange(space.n), np.diff(indptr))

    def touches(mask):
        hit = np.zeros(space.n, dtype=bool)
        hit[deg_rows[mask[indices]]] = True
        return hit

    for t in np.linspace(lo, hi, k):
        inner = np.zeros(space.n, dtype=bool)
        inner[filled_ball(space, int(x), t, anchor)] = True
        outer = np.zeros(space.n, dtype=bool)
        outer[filled_ball(space, int(x), t + w, anchor)] = True
        band = outer & ~inner
        I = band & touches(inner)
        O = band & touches(~outer)
        if not I.any() or not O.any() or not _components_meet(indptr, indices, band, I, O):
            continue
        middle = band & (dx >= t + w / 3) & (dx < t + 2 * w / 3)
        mid = np.flatnonzero(middle)
        if mid.size:
            centres = _spread(space, mid, h / 2)
            if max_centers is not None:
                centres = centres[:max_centers]
        else:
            centres = mid
        good = True
        for z in centres:
            allowed = band & ~space.within(int(z), w / 8)
            if not _components_meet(indptr, indices, allowed, I, O):
                good = False
                break
        if good:
            return True
    return False


def _spread(space, candidates, r):
    # greedy r-net of the candidates (every candidate within r of a centre)
    chosen = []
    covered = np.zeros(space.n, dtype=bool)
    for c in candidates:
        if covered[c]:
            continue
        chosen.append(int(c))
        covered |= space.within(int(c), r) if r > 0 else False
        covered[c] = True
    return np.asarray(chosen, dtype=np.int64)


# sigma ----------------------------------------------------------------------------------


def default_sigma(filling, geometry=None, zeta=0.1, strategy="ratio_with_event", eta=0.01, max_centers=None):
    """Initial weights: ball diameter over inradius of the filled ball, clamped at one, and
    forced to one wherever the event proxy fails (``ratio`` skips the event).

    ``metric_only`` replaces the Euclidean ratio by a^n / a^(n-1+zeta) and evaluates the
    event on the filling's own space.
    """
    if strategy not in STRATEGIES:
        raise InvalidParameter(f"unknown strategy {strategy!r}")
    _check_zeta(zeta)
    if strategy != "metric_only" and geometry is None:
        raise MissingEmbedding(f"strategy {strategy!r} needs a planar embedding")
    a = filling.alpha
    N = filling.n_vertices
    lv, pts = filling.level_of(), filling.point_of()
    sigma = np.full(N, np.nan)
    event = np.ones(N, dtype=bool)
    log = {"event_failed": 0, "scale_too_coarse": 0, "anchor_inside": 0, "zero_inradius": 0}
    for v in range(1, N):
        n, x = int(lv[v]), int(pts[v])
        if strategy != "ratio":
            if strategy == "metric_only":
                space, xv = filling.space, x
            else:
                space, xv = geometry.graph, geometry.vertex(x)
            try:
                ok = check_F_event(space, xv, n, a, zeta, max_centers=max_centers)
            except ScaleTooCoarse:
                log["scale_too_coarse"] += 1
                ok = False
            event[v] = ok
            if not ok:
                log["event_failed"] += 1
                sigma[v] = 1.0
                continue
        if strategy == "metric_only":
            sigma[v] = min(a**n / a ** (n - 1 + zeta), 1.0)
            continue
        sigma[v] = _euclidean_ratio(geometry, x, n, a, zeta, log)
    return WeightState(eta=float(eta), zeta=float(zeta), sigma=sigma, event=event, log=log)


def _euclidean_ratio(geometry, x, n, a, zeta, log):
    v = geometry.vertex(x)
    try:
        region = geometry.filled(v, a ** (n - 1 + zeta))
    except AnchorInsideBall:
        log["anchor_inside"] += 1
        return 1.0
    try:
        inr = geometry.shape(v, region)[1]
        if not inr > 0:
            raise ZeroInradius(f"inradius vanishes at vertex {v}", witness={"vertex": v, "level": n})
    except ZeroInradius:
        log["zero_inradius"] += 1
        return 1.0
    d = geometry.diam(geometry.ball(v, 4 * a**n))
    return min(d / inr, 1.0)


# admissibility --------------------------------------------------------------------------


def _space_rows(space, pts):
    if hasattr(space, "dist"):
        return space.dist[np.asarray(pts, dtype=np.int64)]
    return np.stack([np.asarray(space.distances_from(int(p)), dtype=np.float64) for p in pts])


def crossing_sets(filling, n):
    """Boolean matrices (parents x level-n vertices) of chain starts and chain ends.

    Start: B(y, a^(n-1)) meets B(x, 4a^n). End: the complement of B(y, 2a^(n-1)) meets
    B(x, 4a^n). Both are decided on witnesses among all points of the space.
    """
    a = filling.alpha
    Rn = _space_rows(filling.space, filling.level_points(n))
    Rp = _space_rows(filling.space, filling.level_points(n - 1))
    B4 = (Rn < 4 * a**n).astype(np.float32)
    S = (Rp < a ** (n - 1)).astype(np.float32) @ B4.T > 0
    T = (Rp >= 2 * a ** (n - 1)).astype(np.float32) @ B4.T > 0
    return S, T


def _level_margins(filling, sigma, n, sets=None):
    S, T = crossing_sets(filling, n) if sets is None else sets
    A = filling.horizontal_csr(n)
    indptr, indices = A.indptr.astype(np.int32), A.indices.astype(np.int32)
    w = np.asarray(sigma[filling.level_vertices(n)], dtype=np.float64)
    k = len(w)
    allowed = np.ones(k, dtype=np.int8)
    margins = np.full(S.shape[0], np.inf)
    ends = np.full(S.shape[0], -1, dtype=np.int64)
    for y in range(S.shape[0]):
        if not S[y].any() or not T[y].any():
            continue
        dist = kernels.node_weighted_dijkstra(indptr, indices, w, S[y].astype(np.int8), allowed)
        dt = np.where(T[y], dist, np.inf)
        j = int(np.argmin(dt))
        margins[y], ends[y] = dt[j], j
    return margins, ends


def admissibility_margin(filling, sigma, parent_vertex):
    """Minimum weight of a horizontal chain crossing from B(y, a^(n-1)) to the complement
    of B(y, 2a^(n-1)) on the next level; inf when no chain crosses."""
    lv = filling.level_of()
    p = int(parent_vertex)
    n = int(lv[p]) + 1
    if n > filling.n_max:
        raise InvalidParameter(f"vertex {p} is on the deepest level")
    margins, _ = _level_margins(filling, sigma, n)
    return float(margins[filling.position_of(p)])


def repair_sigma(filling, sigma, max_raises=None):
    """Scale each level so every crossing chain weighs at least one.

    Zero-weight crossings are broken first by raising the end vertex of a minimal chain to
    one, repeatedly. Returns (sigma', report per level).
    """
    sigma = np.array(sigma, dtype=np.float64)
    report = []
    for n in range(1, filling.n_max + 1):
        sets = crossing_sets(filling, n)
        vs = filling.level_vertices(n)
        budget = len(vs) if max_raises is None else max_raises
        raises = 0
        margins, ends = _level_margins(filling, sigma, n, sets)
        while np.any(margins == 0):
            if raises >= budget:
                y = int(np.flatnonzero(margins == 0)[0])
                raise ZeroMargin(f"level {n} keeps a zero-weight crossing", witness={"level": n, "parent": y})
            y = int(np.flatnonzero(margins == 0)[0])
            sigma[vs[ends[y]]] = 1.0
            raises += 1
            margins, ends = _level_margins(filling, sigma, n, sets)
        finite = margins[np.isfinite(margins)]
        m = float(finite.min()) if finite.size else float("inf")
        factor = max(1.0, 1.0 / m) if finite.size else 1.0
        if factor != 1.0:
            sigma[vs] = sigma[vs] * factor
            margins, _ = _level_margins(filling, sigma, n, sets)
            finite = margins[np.isfinite(margins)]
        after = float(finite.min()) if finite.size else float("inf")
        report.append({"level": n, "min_margin_before": m, "raised": raises, "factor": factor,
                       "min_margin_after": after, "admissible": bool(after >= 1 - MARGIN_TOL)})
    return sigma, report


def all_margins(filling, sigma):
    """Per-level arrays of parent margins (the exact oracle used by the acceptance check)."""
    return [_level_margins(filling, sigma, n)[0] for n in range(1, filling.n_max + 1)]


# nu, mu, parents ------------------------------------------------------------------------


def compute_nu_mu(filling, sigma, eta):
    """nu(u) = 2 max sigma over the two-step horizontal neighbourhood of u (u itself
    included); mu clamps nu into [eta, 1 - eta]."""
    _check_eta(eta)
    N = filling.n_vertices
    nu = np.full(N, np.nan)
    for n in range(1, filling.n_max + 1):
        vs = filling.level_vertices(n)
        A = filling.horizontal_csr(n, self_loops=True)
        A2 = (A @ A).tocsr()
        A2.sort_indices()
        s = np.asarray(sigma[vs], dtype=np.float64)
        nu[vs] = 2 * np.maximum.reduceat(s[A2.indices], A2.indptr[:-1])
    mu = np.maximum(eta, np.minimum(nu, 1 - eta))
    return nu, mu


def choose_parents(filling):
    """Parent of each vertex: the nearest point of the previous level (smaller vertex id on
    ties). Returns (parent, report)."""
    a = filling.alpha
    parent = np.full(filling.n_vertices, -1, dtype=np.int64)
    worst, bad_adj = 0.0, 0
    for n in range(filling.n_max):
        D = filling.level_dist(n, n + 1)
        j = np.argmin(D, axis=0)
        d = D[j, np.arange(D.shape[1])]
        parent[filling.level_vertices(n + 1)] = filling.offsets[n] + j
        bad_adj += int(np.sum(~(d < a**n + a ** (n + 1))))
        worst = max(worst, float(np.max(d / a**n)))
    return parent, {"max_distance_over_radius": worst, "non_adjacent": bad_adj,
                    "within_radius": bool(worst <= 1.0)}


# pi regularization ----------------------------------------------------------------------


def _close(a, b):
    return abs(a - b) <= LOG_TOL * (1 + abs(a) + abs(b))


def _vertical_neighbours(filling, n):
    """CSR rows: level-n vertices, columns: level-(n-1) positions adjacent to them."""
    return filling.vertical_csr(n - 1)


def regularize_pi(filling, mu, parent, eta):
    """Level-by-level construction of pi from pi' = pi(parent) * mu, in log form.

    v' dominates v when they are horizontal neighbours and pi'(v') > pi'(v) / eta; a
    dominated vertex gets eta times the largest pi' among its dominators. The resulting
    level is checked against the three postconditions and the absence of dominance
    chains; any failure raises AxiomViolation. Returns (log_pi, log_pi_prime, rho).
    """
    _check_eta(eta)
    le = np.log(eta)
    N = filling.n_vertices
    log_pi = np.full(N, np.nan)
    lpp = np.full(N, np.nan)
    log_pi[0] = 0.0
    lpp[0] = 0.0
    for n in range(1, filling.n_max + 1):
        vs = filling.level_vertices(n)
        q = log_pi[parent[vs]] + np.log(mu[vs])
        lpp[vs] = q
        a, b = filling.horizontal[n]
        # dominance in both directions along each edge
        ab = q[a] - q[b] > -le  # a dominates b
        ba = q[b] - q[a] > -le
        best = np.full(len(vs), -np.inf)
        np.maximum.at(best, b[ab], q[a[ab]])
        np.maximum.at(best, a[ba], q[b[ba]])
        dominated = np.isfinite(best)
        p = np.where(dominated, le + best, q)
        log_pi[vs] = p
        _check_level(filling, n, q, p, a, b, ab, ba, dominated, le, log_pi)
    rho = np.full(N, np.nan)
    rho[1:] = np.exp(log_pi[1:] - log_pi[parent[1:]])
    return log_pi, lpp, rho


def _check_level(filling, n, q, p, a, b, ab, ba, dominated, le, log_pi):
    k = len(q)
    vs = filling.level_vertices(n)
    # no chain v > v' > v''
    has_pred = np.zeros(k, dtype=bool)
    has_succ = np.zeros(k, dtype=bool)
    has_pred[b[ab]] = True
    has_pred[a[ba]] = True
    has_succ[a[ab]] = True
    has_succ[b[ba]] = True
    chain = np.flatnonzero(has_pred & has_succ)
    if chain.size:
        raise AxiomViolation("dominance chain of length two", witness={"level": n, "vertex": int(vs[chain[0]])})
    # (i) horizontal ratios within [eta, 1/eta]
    diff = p[a] - p[b]
    for e in np.flatnonzero(np.abs(diff) > -le):
        if not _close(abs(diff[e]), -le):
            raise AxiomViolation("horizontal ratio outside [eta, 1/eta]",
                                 witness={"level": n, "u": int(vs[a[e]]), "v": int(vs[b[e]]), "log_ratio": float(diff[e])})
    # (ii) either unchanged, or eta * max pi' over neighbours and strictly above pi'
    A = filling.horizontal_csr(n)
    for v in np.flatnonzero(dominated):
        nb = A.indices[A.indptr[v]: A.indptr[v + 1]]
        target = le + q[nb].max()
        if not (_close(p[v], target) and p[v] > q[v]):
            raise AxiomViolation("raised value is not eta times the neighbour maximum",
                                 witness={"level": n, "vertex": int(vs[v])})
    if np.any(p[~dominated] != q[~dominated]):
        raise AxiomViolation("unraised vertex changed", witness={"level": n})
    # (iii) a vertically adjacent vertex one level up with 1 <= pi(u)/pi(v) <= 1/eta
    V = filling.vertical_csr(n - 1)
    up = log_pi[filling.level_vertices(n - 1)]
    for v in range(k):
        cols = V.indices[V.indptr[v]: V.indptr[v + 1]]
        r = up[cols] - p[v]
        ok = np.any((r >= -LOG_TOL * (1 + abs(p[v]))) & (r <= -le + LOG_TOL * (1 + abs(p[v]))))
        if not ok:
            raise AxiomViolation("no vertical neighbour within the ratio window",
                                 witness={"level": n, "vertex": int(vs[v])})


# axiom checks ---------------------------------------------------------------------------


def _ancestors(filling, parent):
    N = filling.n_vertices
    lv = filling.level_of()
    anc = np.full((N, filling.n_max + 1), -1, dtype=np.int64)
    for v in range(N):
        u = v
        while u >= 0:
            anc[v, lv[u]] = u
            u = parent[u]
    return anc


def _adjacent_or_equal(filling, u, v):
    if u == v:
        return True
    lv = filling.level_of()
    if lv[u] != lv[v]:
        return False
    n = int(lv[u])
    pos = filling.position_of()
    i, j = sorted((int(pos[u]), int(pos[v])))
    return filling.dist[i, j] < 8 * filling.alpha**n


def vertex_pair_pi(filling, state, u, v, anc=None):
    """log pi(u, v): larger log pi of the two ancestors at the deepest level where the
    ancestors coincide or are horizontal neighbours."""
    anc = _ancestors(filling, state.parent) if anc is None else anc
    lv = filling.level_of()
    top = min(int(lv[u]), int(lv[v]))
    for n in range(top, -1, -1):
        gu, gv = int(anc[u, n]), int(anc[v, n])
        if _adjacent_or_equal(filling, gu, gv):
            return max(state.log_pi[gu], state.log_pi[gv]), n
    return 0.0, 0


def _z_graph(filling, parent):
    o = filling.offsets
    rows, cols = [], []
    for n, (a, b) in enumerate(filling.horizontal):
        rows += [a + o[n], b + o[n]]
        cols += [b + o[n], a + o[n]]
    ch = np.arange(1, filling.n_vertices)
    rows += [ch, parent[ch]]
    cols += [parent[ch], ch]
    r, c = np.concatenate(rows), np.concatenate(cols)
    N = filling.n_vertices
    g = csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(N, N))
    g.sum_duplicates()
    return g


def check_H_axioms(filling, state, n_paths=1000, seed=None, raise_on_violation=True):
    """H1 and H2 exactly; H3 as the smallest sum(pi)/pi(u0, uN) over random Z-paths."""
    eta = state.eta
    le = np.log(eta)
    N = filling.n_vertices
    lp, mu, rho = state.log_pi, state.mu, state.rho
    h1 = []
    for v in range(1, N):
        lo_ok = rho[v] >= eta * (1 - LOG_TOL)
        hi_ok = rho[v] <= (1 - eta) * (1 + LOG_TOL)
        if not (lo_ok and hi_ok):
            h1.append({"vertex": v, "rho": float(rho[v]), "clause": "range"})
    for n in range(1, filling.n_max + 1):
        vs = filling.level_vertices(n)
        A = filling.horizontal_csr(n, self_loops=True)
        m = mu[vs]
        mx = np.maximum.reduceat(m[A.indices], A.indptr[:-1])
        r = rho[vs]
        bad = np.flatnonzero((r < m * (1 - LOG_TOL)) | (r > mx * (1 + LOG_TOL)))
        h1 += [{"vertex": int(vs[i]), "rho": float(r[i]), "clause": "mu-sandwich"} for i in bad]
    h2 = []
    o = filling.offsets
    edges = [(a + o[n], b + o[n]) for n, (a, b) in enumerate(filling.horizontal)]
    edges += [(a + o[n], b + o[n + 1]) for n, (a, b) in enumerate(filling.vertical)]
    for a, b in edges:
        d = np.abs(lp[a] - lp[b])
        bad = np.flatnonzero(d > -2 * le + LOG_TOL * (1 + np.abs(lp[a]) + np.abs(lp[b])))
        h2 += [{"u": int(a[i]), "v": int(b[i]), "log_ratio": float(lp[a[i]] - lp[b[i]])} for i in bad]
    if raise_on_violation and h1:
        raise H1Violation(f"{len(h1)} H1 violations", witness=h1[0])
    if raise_on_violation and h2:
        raise H2Violation(f"{len(h2)} H2 violations", witness=h2[0])
    h3 = _h3_probe(filling, state, n_paths, seed)
    return {"h1_violations": len(h1), "h2_violations": len(h2), "h1_witness": h1[:5], "h2_witness": h2[:5], **h3}


def _h3_probe(filling, state, n_paths, seed):
    if n_paths <= 0 or filling.n_vertices < 2:
        return {"h3_paths": 0, "h3_min_ratio": None}
    rng = np.random.default_rng(seed)
    Z = _z_graph(filling, state.parent)
    anc = _ancestors(filling, state.parent)
    N = filling.n_vertices
    pi = np.exp(state.log_pi)
    best, wit = np.inf, None
    max_len = 2 * filling.n_max + 4
    for _ in range(n_paths):
        u = int(rng.integers(N))
        path = [u]
        for _ in range(int(rng.integers(1, max_len + 1))):
            nb = Z.indices[Z.indptr[u]: Z.indptr[u + 1]]
            if nb.size == 0:
                break
            u = int(nb[rng.integers(nb.size)])
            path.append(u)
        lpair, _ = vertex_pair_pi(filling, state, path[0], path[-1], anc)
        ratio = float(pi[path].sum() / np.exp(lpair))
        if ratio < best:
            best, wit = ratio, {"path": path}
    return {"h3_paths": int(n_paths), "h3_min_ratio": float(best), "h3_witness": wit}


# point pairs and boundary metric --------------------------------------------------------


def _witness_sets(filling, pts_dist, n):
    """Boolean (level-n vertices x points): point within 2 a^n of the net point."""
    return pts_dist[: filling.sizes[n]] < 2 * filling.alpha**n


def pi_of_pair(filling, state, x, y):
    """(n(x, y), witness vertices, log pi(x, y)) for two distinct points of the space."""
    x, y = int(x), int(y)
    if x == y:
        raise IdenticalPoints("pi(x, y) needs distinct points")
    deep = filling.points
    dx = np.asarray(filling.space.distances_from(x), dtype=np.float64)[deep]
    dy = np.asarray(filling.space.distances_from(y), dtype=np.float64)[deep]
    for n in range(filling.n_max, -1, -1):
        k = filling.sizes[n]
        r = 2 * filling.alpha**n
        w = np.flatnonzero((dx[:k] < r) & (dy[:k] < r))
        if w.size:
            c = filling.offsets[n] + w
            return n, c, float(state.log_pi[c].max())
    return 0, np.array([0]), 0.0


def pair_table(filling, state):
    """(n(x, y), log pi(x, y)) for all pairs of deepest-level points."""
    K = int(filling.sizes[-1])
    D = filling.dist
    nxy = np.zeros((K, K), dtype=np.int64)
    lxy = np.zeros((K, K))
    for n in range(filling.n_max + 1):
        k = int(filling.sizes[n])
        W = D[:k] < 2 * filling.alpha**n
        lp = state.log_pi[filling.level_vertices(n)]
        level = np.full((K, K), -np.inf)
        for z in np.argsort(lp, kind="stable"):
            idx = np.flatnonzero(W[z])
            if idx.size:
                level[np.ix_(idx, idx)] = lp[z]
        hit = np.isfinite(level)
        nxy[hit] = n
        lxy[hit] = level[hit]
    return nxy, lxy


@dataclass
class BoundaryMetric:
    epsilon: float
    method: str
    points: np.ndarray
    values: np.ndarray = field(repr=False)

    def to_space(self):
        from .metric import FiniteMetricSpace

        return FiniteMetricSpace(self.values, validate=False)


METHODS = ("pi_comparator", "graph_path_lower", "graph_path_upper")


def boundary_metric(filling, state, epsilon=1.0, method="pi_comparator"):
    """Deformed distances between deepest-level points.

    ``pi_comparator``: pi(x, y)^epsilon. Graph methods: shortest paths in the Z graph with
    horizontal length 2 log(1/eta), vertical length log(1/rho(child)), each damped by
    exp(-epsilon * M) with M the larger (lower bound) or smaller (upper bound) endpoint
    value of log(1/pi).
    """
    if not 0 < epsilon <= 1:
        raise BadEpsilon(f"epsilon must lie in (0, 1], got {epsilon}")
    if method not in METHODS:
        raise InvalidParameter(f"unknown method {method!r}")
    K = int(filling.sizes[-1])
    pts = filling.points
    if method == "pi_comparator":
        _, lxy = pair_table(filling, state)
        vals = np.exp(epsilon * lxy)
        np.fill_diagonal(vals, 0.0)
        return BoundaryMetric(float(epsilon), method, pts, vals)
    dep = -state.log_pi
    o = filling.offsets
    rows, cols, w = [], [], []
    le = -np.log(state.eta)
    pick = np.maximum if method == "graph_path_lower" else np.minimum
    for n, (a, b) in enumerate(filling.horizontal):
        ga, gb = a + o[n], b + o[n]
        rows.append(ga)
        cols.append(gb)
        w.append(2 * le * np.exp(-epsilon * pick(dep[ga], dep[gb])))
    ch = np.arange(1, filling.n_vertices)
    par = state.parent[ch]
    rows.append(par)
    cols.append(ch)
    w.append(-np.log(state.rho[ch]) * np.exp(-epsilon * pick(dep[ch], dep[par])))
    N = filling.n_vertices
    G = coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    deep = filling.level_vertices(filling.n_max)
    Dm = dijkstra(G, directed=False, indices=deep)[:, deep]
    # the two directions sum the same path in opposite order; keep one rounding
    Dm = np.minimum(Dm, Dm.T)
    np.fill_diagonal(Dm, 0.0)
    return BoundaryMetric(float(epsilon), method, pts[:K], Dm)


# modulus-based upper envelope -----------------------------------------------------------


def varsigma_varpi(filling, geometry, state, eta=None, zeta=None, max_centers=None):
    """Per-vertex envelope (eta + 128 exp(-2 pi m) + 2 [event fails]) ^ 1 with m the
    modulus lower bound from the inradius of the filled a^(n-1+zeta)/2 ball and the
    outradius of the filled 32 a^n ball, its products along parent paths, and the check
    pi <= product. Returns (varsigma, log_varpi, report)."""
    if geometry is None:
        raise MissingEmbedding("the modulus envelope needs a planar embedding")
    eta = state.eta if eta is None else eta
    zeta = state.zeta if zeta is None else zeta
    a = filling.alpha
    N = filling.n_vertices
    lv, pts = filling.level_of(), filling.point_of()
    vs = np.full(N, np.nan)
    lw = np.zeros(N)
    for v in range(1, N):
        n, x = int(lv[v]), int(pts[v])
        gv = geometry.vertex(x)
        if state.event is not None:
            ok = bool(state.event[v])
        else:
            try:
                ok = check_F_event(geometry.graph, gv, n, a, zeta, max_centers=max_centers)
            except ScaleTooCoarse:
                ok = False
        m = 0.0
        if ok:
            try:
                inr = geometry.shape(gv, geometry.filled(gv, a ** (n - 1 + zeta) / 2))[1]
                outr = geometry.shape(gv, geometry.filled(gv, 32 * a**n))[2]
                if inr > outr > 0:
                    m = modulus_from_ratio(inr, outr)
            except AnchorInsideBall:
                m = 0.0
        vs[v] = min(eta + 128 * np.exp(-2 * np.pi * m) + (0.0 if ok else 2.0), 1.0)
        lw[v] = lw[state.parent[v]] + np.log(vs[v])
    excess = state.log_pi - lw
    bad = np.flatnonzero(excess > LOG_TOL)
    report = {"violations": int(bad.size), "max_log_excess": float(np.max(excess)),
              "witness": None if not bad.size else {"vertex": int(bad[0]), "log_excess": float(excess[bad[0]])}}
    return vs, lw, report
