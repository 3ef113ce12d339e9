"""Hyperbolic filling over a nested net hierarchy.

Vertices are pairs (net point, level). Level n is a prefix of the deepest net, so one
distance matrix over the deepest net serves every edge rule. Global vertex ids run level
by level: ``offsets[n] + position``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, identity

from . import kernels
from .errors import DiamNotNormalized, EmptyLevel, InvalidParameter

EXHAUSTIVE_LIMIT = 200
_CHUNK = 1024


@dataclass
class FillingGraph:
    alpha: float
    points: np.ndarray
    sizes: np.ndarray
    dist: np.ndarray = field(repr=False)
    horizontal: list = field(repr=False)
    vertical: list = field(repr=False)
    space: object = field(default=None, repr=False)
    _adj: tuple = field(default=None, repr=False)
    _root_hops: np.ndarray = field(default=None, repr=False)

    @property
    def n_max(self):
        return len(self.sizes) - 1

    @property
    def offsets(self):
        return np.r_[0, np.cumsum(self.sizes)].astype(np.int64)

    @property
    def n_vertices(self):
        return int(self.sizes.sum())

    @property
    def root(self):
        return 0

    def vertex(self, level, pos):
        return int(self.offsets[level] + pos)

    def level_of(self, v=None):
        lv = np.repeat(np.arange(len(self.sizes)), self.sizes)
        return lv if v is None else lv[v]

    def position_of(self, v=None):
        pos = np.concatenate([np.arange(s) for s in self.sizes])
        return pos if v is None else pos[v]

    def point_of(self, v=None):
        pts = self.points[self.position_of()]
        return pts if v is None else pts[v]

    def level_vertices(self, n):
        o = self.offsets
        return np.arange(o[n], o[n + 1])

    def level_points(self, n):
        return self.points[: self.sizes[n]]

    def level_dist(self, n, m=None):
        """Distances between the points of level n (rows) and level m (columns)."""
        m = n if m is None else m
        return self.dist[: self.sizes[n], : self.sizes[m]]

    def horizontal_csr(self, n, self_loops=False):
        k = int(self.sizes[n])
        a, b = self.horizontal[n]
        A = coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(k, k)).tocsr()
        if self_loops:
            A = A + identity(k, format="csr")
        A.data[:] = 1.0
        return A

    def vertical_csr(self, n):
        """Incidence of level n+1 (rows) against level n (columns)."""
        a, b = self.vertical[n]
        return coo_matrix((np.ones(len(a)), (b, a)), shape=(int(self.sizes[n + 1]), int(self.sizes[n]))).tocsr()

    def adjacency(self):
        if self._adj is None:
            o = self.offsets
            rows, cols = [], []
            for n, (a, b) in enumerate(self.horizontal):
                rows += [a + o[n], b + o[n]]
                cols += [b + o[n], a + o[n]]
            for n, (a, b) in enumerate(self.vertical):
                rows += [a + o[n], b + o[n + 1]]
                cols += [b + o[n + 1], a + o[n]]
            N = self.n_vertices
            r = np.concatenate(rows) if rows else np.empty(0, np.int64)
            c = np.concatenate(cols) if cols else np.empty(0, np.int64)
            g = csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(N, N))
            g.sum_duplicates()
            g.sort_indices()
            self._adj = (g.indptr.astype(np.int32), g.indices.astype(np.int32))
        return self._adj

    def hops_from(self, sources):
        indptr, indices = self.adjacency()
        visited, hops = kernels.bfs_hops(indptr, indices, sources, -1)
        out = np.full(self.n_vertices, -1, dtype=np.int64)
        out[visited] = hops
        return out

    @property
    def root_hops(self):
        if self._root_hops is None:
            self._root_hops = self.hops_from(self.root)
        return self._root_hops

    def edge_rows(self):
        """(level_u, id_u, level_v, id_v, kind) with ids the net point indices."""
        rows = []
        for n, (a, b) in enumerate(self.horizontal):
            P = self.level_points(n)
            rows += [(n, int(P[i]), n, int(P[j]), "H") for i, j in zip(a, b)]
        for n, (a, b) in enumerate(self.vertical):
            rows += [(n, int(self.points[i]), n + 1, int(self.points[j]), "V") for i, j in zip(a, b)]
        return rows

    def write_edges_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level_u", "id_u", "level_v", "id_v", "kind"])
            w.writerows(self.edge_rows())


def _pairs_below(D, r):
    a, b = np.nonzero(np.triu(D < r, k=1))
    return a.astype(np.int64), b.astype(np.int64)


def build_filling(space, nets):
    """Horizontal edges where dist < 8 alpha^n; vertical edges (n, n+1) where
    dist < alpha^n + alpha^(n+1) (open balls meet)."""
    if space.diam >= 1:
        raise DiamNotNormalized(f"diameter {space.diam} must be < 1")
    levels = nets.levels
    for n, lv in enumerate(levels):
        if len(lv) == 0:
            raise EmptyLevel(f"level {n} is empty", witness={"level": n})
        if n and not np.array_equal(lv[: len(levels[n - 1])], levels[n - 1]):
            raise InvalidParameter(f"level {n} does not extend level {n - 1}")
    if len(levels[0]) != 1:
        raise InvalidParameter("level 0 must hold a single point")
    a = nets.alpha
    deep = np.asarray(levels[-1], dtype=np.int64)
    D = np.asarray(space.distance_submatrix(deep), dtype=np.float64)
    sizes = np.array([len(lv) for lv in levels], dtype=np.int64)
    horizontal, vertical = [], []
    for n in range(len(levels)):
        k = sizes[n]
        horizontal.append(_pairs_below(D[:k, :k], 8 * a**n))
        if n + 1 < len(levels):
            i, j = np.nonzero(D[:k, : sizes[n + 1]] < a**n + a ** (n + 1))
            vertical.append((i.astype(np.int64), j.astype(np.int64)))
    return FillingGraph(float(a), deep, sizes, D, horizontal, vertical, space)


def graph_distance(filling, u, v):
    if u == v:
        return 0
    return int(filling.hops_from(int(u))[int(v)])


def gromov_product(filling, u, v, du=None):
    """(u, v) based at the root; ``du`` may carry precomputed hops from u."""
    r = filling.root_hops
    duv = graph_distance(filling, u, v) if du is None else int(du[v])
    return 0.5 * (r[u] + r[v] - duv)


@dataclass
class GromovReport:
    delta: float = 0.0
    C: float = 1.0
    samples: int = 0
    description: str = ""
    witness: dict = None

    def to_dict(self):
        return {"delta": self.delta, "C": self.C, "samples": self.samples,
                "description": self.description, "witness": self.witness}


def _triples(rng, N, count):
    out = []
    left = count
    while left > 0:
        block = rng.integers(0, N, size=(_CHUNK, 3))
        out.append(block[: min(left, _CHUNK)])
        left -= _CHUNK
    return np.concatenate(out) if out else np.empty((0, 3), dtype=np.int64)


def _all_hops(filling):
    N = filling.n_vertices
    H = np.empty((N, N), dtype=np.int64)
    for v in range(N):
        H[v] = filling.hops_from(v)
    return H


def estimate_delta(filling, n_quadruples=1000, seed=None, exhaustive=None):
    """Largest violation min((x,z),(y,z)) - (x,y) of the four-point condition with base
    the root, over random triples, or over all triples on small graphs."""
    if n_quadruples < 1:
        raise InvalidParameter("need at least one sample")
    N = filling.n_vertices
    exhaustive = N <= EXHAUSTIVE_LIMIT if exhaustive is None else exhaustive
    r = filling.root_hops.astype(np.float64)
    if exhaustive:
        H = _all_hops(filling).astype(np.float64)
        G = 0.5 * (r[:, None] + r[None, :] - H)
        best, wit = 0.0, None
        for z in range(N):
            m = np.minimum(G[:, z][:, None], G[z, :][None, :]) - G
            i = np.unravel_index(np.argmax(m), m.shape)
            if m[i] > best:
                best, wit = float(m[i]), {"x": int(i[0]), "y": int(i[1]), "z": z}
        return GromovReport(delta=best, samples=N**3, description="exhaustive triples", witness=wit)
    rng = np.random.default_rng(seed)
    T = _triples(rng, N, n_quadruples)
    best, wit = 0.0, None
    cache = {}

    def hops(v):
        if v not in cache:
            if len(cache) > 4096:
                cache.clear()
            cache[v] = filling.hops_from(int(v))
        return cache[v]

    for x, y, z in T:
        hx, hy = hops(x), hops(y)
        gxy = 0.5 * (r[x] + r[y] - hx[y])
        gxz = 0.5 * (r[x] + r[z] - hx[z])
        gyz = 0.5 * (r[y] + r[z] - hy[z])
        v = min(gxz, gyz) - gxy
        if v > best:
            best, wit = float(v), {"x": int(x), "y": int(y), "z": int(z)}
    return GromovReport(delta=best, samples=int(len(T)), description="sampled triples", witness=wit)


def sandwich_constants(filling, n_pairs=1000, seed=None):
    """Smallest C with C^-1 a^(u,v) <= D(x,y) + a^m + a^n <= C a^(u,v) over sampled pairs."""
    if n_pairs < 1:
        raise InvalidParameter("need at least one sample")
    N = filling.n_vertices
    rng = np.random.default_rng(seed)
    P = _triples(rng, N, n_pairs)[:, :2]
    a = filling.alpha
    lv = filling.level_of()
    pos = filling.position_of()
    r = filling.root_hops
    order = np.argsort(P[:, 0], kind="stable")
    C, wit = 1.0, None
    cur, hu = -1, None
    for k in order:
        u, v = int(P[k, 0]), int(P[k, 1])
        if u != cur:
            cur, hu = u, filling.hops_from(u)
        g = 0.5 * (r[u] + r[v] - hu[v])
        q = filling.dist[pos[u], pos[v]] + a ** lv[u] + a ** lv[v]
        ratio = q / a**g
        c = max(ratio, 1.0 / ratio)
        if c > C:
            C, wit = float(c), {"u": u, "v": v, "gromov": float(g), "value": float(q)}
    return GromovReport(C=C, samples=int(len(P)), description="sampled pairs", witness=wit)


def check_path_condition(filling, L=100):
    """For every level n >= 1: whenever u0 and uL are joined by a horizontal walk of length
    L (repeats allowed) and v0, vL on level n-1 are vertically adjacent to them, v0 and vL
    must be equal or adjacent. Reports the first violation and its walk length."""
    if L < 2:
        raise InvalidParameter("L must be at least 2")
    report = {"L": int(L), "passed": True, "min_violating_length": None, "witness": None}
    for n in range(1, filling.n_max + 1):
        if filling.sizes[n] <= 1:
            continue
        A = filling.horizontal_csr(n, self_loops=True)
        Pm = filling.vertical_csr(n - 1)
        up = (filling.horizontal_csr(n - 1, self_loops=True).toarray() > 0)
        R = identity(A.shape[0], format="csr")
        for length in range(1, L + 1):
            Rn = (R @ A)
            Rn.data[:] = 1.0
            if length > 1 and Rn.nnz == R.nnz:
                break
            R = Rn
            W = (Pm.T @ R @ Pm).toarray() > 0
            bad = W & ~up
            if bad.any():
                i, j = np.argwhere(bad)[0]
                if report["min_violating_length"] is None or length < report["min_violating_length"]:
                    report.update(passed=False, min_violating_length=length,
                                  witness={"level": n, "v0": int(filling.level_points(n - 1)[i]),
                                           "vL": int(filling.level_points(n - 1)[j])})
                break
    return report
