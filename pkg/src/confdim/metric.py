"""Finite metric spaces, balls, filled balls, nets and covering numbers.

Three storage backends share one interface:

* ``FiniteMetricSpace``: dense distance matrix.
* ``GraphMetricSpace``: unit-length edges times a scale factor, distances by BFS.
* ``EuclideanSpace``: point coordinates, queries through a k-d tree.

Connectivity questions ("components of the complement of a ball") are answered in the
proximity graph that links points at distance at most ``h``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial.distance import cdist
from scipy.spatial import ConvexHull, cKDTree

from . import kernels
from .errors import (
    AnchorInsideBall,
    AsymmetricMatrix,
    DiamNotNormalized,
    InvalidMass,
    InvalidParameter,
    NegativeDistance,
    TriangleViolation,
)

TRIANGLE_TOL = 1e-9


def _check_mass(mass, n):
    if mass is None:
        return None
    mass = np.asarray(mass, dtype=np.float64)
    if mass.shape != (n,):
        raise InvalidMass(f"mass has shape {mass.shape}, expected ({n},)")
    if not np.all(np.isfinite(mass)) or np.any(mass <= 0):
        bad = int(np.flatnonzero(~np.isfinite(mass) | (mass <= 0))[0])
        raise InvalidMass("masses must be positive and finite", witness={"index": bad, "value": float(mass[bad])})
    return mass


def _check_mark(i, n, what):
    if i is None:
        return None
    i = int(i)
    if not 0 <= i < n:
        raise InvalidParameter(f"{what} index {i} out of range for {n} points")
    return i


def _csr_from_mask_rows(rows, n):
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    return indptr.astype(np.int32), indices.astype(np.int32)


def _bottleneck(graph, n):
    """Largest edge of a minimum spanning tree; zero-length edges are kept as edges."""
    if n <= 1:
        return 0.0
    g = graph.tocsr(copy=True)
    g.data = np.where(g.data <= 0, 1e-300, g.data)
    ncomp, _ = connected_components(g, directed=False)
    if ncomp > 1:
        return None
    mst = minimum_spanning_tree(g)
    return float(mst.data.max()) if mst.nnz else 0.0


class MetricSpace:
    """Shared behaviour; subclasses provide ``distances_from``, ``ball``, ``proximity``,
    ``diam``, ``rescaled`` and ``net``."""

    n: int
    mass = None
    root = 0
    anchor = None

    def __len__(self):
        return self.n

    @property
    def total_mass(self):
        return float(self.mass.sum()) if self.mass is not None else None

    def mass_of(self, idx):
        if self.mass is None:
            return None
        return float(self.mass[np.asarray(idx, dtype=np.int64)].sum())

    def ball_mask(self, c, r):
        mask = np.zeros(self.n, dtype=bool)
        mask[self.ball(c, r)] = True
        return mask

    def distance(self, i, j):
        return float(self.distances_from(i)[j])

    def sample_order(self, ordering="identity", seed=None):
        """Permutation used to scan points greedily.

        ``"mass"`` yields the order of first appearance in an i.i.d. mass-weighted stream
        (exponential-clock form of successive sampling).
        """
        if isinstance(ordering, str):
            if ordering == "identity":
                return np.arange(self.n, dtype=np.int64)
            if ordering == "mass":
                rng = np.random.default_rng(seed)
                w = self.mass if self.mass is not None else np.ones(self.n)
                return np.argsort(rng.exponential(size=self.n) / w, kind="stable").astype(np.int64)
            raise InvalidParameter(f"unknown ordering {ordering!r}")
        order = np.asarray(ordering, dtype=np.int64)
        if order.shape != (self.n,) or not np.array_equal(np.sort(order), np.arange(self.n)):
            raise InvalidParameter("ordering must be a permutation of the point indices")
        return order


class FiniteMetricSpace(MetricSpace):
    def __init__(self, dist, mass=None, root=0, anchor=None, h=None, validate=True):
        D = np.ascontiguousarray(dist, dtype=np.float64)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise InvalidParameter(f"distance matrix must be square, got shape {D.shape}")
        self.n = D.shape[0]
        if validate:
            _validate_matrix(D)
        self.dist = D
        self.mass = _check_mass(mass, self.n)
        self.root = _check_mark(root, self.n, "root")
        self.anchor = _check_mark(anchor, self.n, "anchor")
        self._h = None if h is None else float(h)
        self._prox = None

    @property
    def h(self):
        if self._h is None:
            self._h = _bottleneck(csr_matrix(self.dist), self.n)
        return self._h

    @property
    def diam(self):
        return float(self.dist.max()) if self.n else 0.0

    def distances_from(self, i):
        return self.dist[i]

    def ball(self, c, r):
        return np.flatnonzero(self.dist[c] < r)

    def within(self, sources, r):
        """Mask of points at distance < r from some source."""
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        if sources.size == 0:
            return np.zeros(self.n, dtype=bool)
        return self.dist[sources].min(axis=0) < r

    def proximity(self):
        if self._prox is None:
            A = self.dist <= self.h
            np.fill_diagonal(A, False)
            self._prox = _csr_from_mask_rows([np.flatnonzero(row) for row in A], self.n)
        return self._prox

    def net(self, r, order=None, seeds=()):
        order = np.arange(self.n) if order is None else order
        return kernels.greedy_net_dense(self.dist, order, r, seeds)

    def rescaled(self, factor):
        return FiniteMetricSpace(
            self.dist * factor, self.mass, self.root, self.anchor,
            None if self._h is None else self._h * factor, validate=False,
        )

    def distance_submatrix(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.dist[np.ix_(idx, idx)]

    def subspace(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        mass = None if self.mass is None else self.mass[idx]
        return FiniteMetricSpace(self.dist[np.ix_(idx, idx)], mass, 0, None, validate=False)


def _validate_matrix(D):
    n = D.shape[0]
    if np.any(np.diag(D) != 0):
        i = int(np.flatnonzero(np.diag(D) != 0)[0])
        raise InvalidParameter("diagonal must be zero", witness={"index": i})
    if not np.all(np.isfinite(D)):
        raise InvalidParameter("distances must be finite")
    asym = np.abs(D - D.T)
    if asym.max(initial=0.0) > 0:
        i, j = np.unravel_index(int(asym.argmax()), D.shape)
        raise AsymmetricMatrix(
            f"dist({i},{j})={D[i, j]} but dist({j},{i})={D[j, i]}",
            witness={"i": int(i), "j": int(j)},
        )
    if D.min(initial=0.0) < 0:
        i, j = np.unravel_index(int(D.argmin()), D.shape)
        raise NegativeDistance(f"dist({i},{j})={D[i, j]} < 0", witness={"i": int(i), "j": int(j)})
    worst, triple = 0.0, None
    for k in range(n):
        excess = D - (D[:, k, None] + D[None, k, :])
        m = float(excess.max())
        if m > worst:
            i, j = np.unravel_index(int(excess.argmax()), D.shape)
            worst, triple = m, (int(i), int(k), int(j))
    if worst > TRIANGLE_TOL:
        i, k, j = triple
        raise TriangleViolation(
            f"dist({i},{j}) exceeds dist({i},{k})+dist({k},{j}) by {worst:.3g}",
            witness={"i": i, "k": k, "j": j, "excess": worst},
        )


def strict_hops(r, scale):
    """Largest hop count k with k*scale < r."""
    k = int(np.floor(r / scale))
    while k > 0 and k * scale >= r:
        k -= 1
    while (k + 1) * scale < r:
        k += 1
    return k


class GraphMetricSpace(MetricSpace):
    """Shortest-path metric of an undirected graph with all edges of length ``scale``."""

    def __init__(self, indptr, indices, scale=1.0, mass=None, root=0, anchor=None):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int32)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.n = len(self.indptr) - 1
        if scale <= 0:
            raise InvalidParameter("scale must be positive")
        self.scale = float(scale)
        self.mass = _check_mass(mass, self.n)
        self.root = _check_mark(root, self.n, "root")
        self.anchor = _check_mark(anchor, self.n, "anchor")
        self._diam_hops = None

    @classmethod
    def from_edges(cls, n, edges, **kw):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        edges = edges[edges[:, 0] != edges[:, 1]]
        u = np.concatenate([edges[:, 0], edges[:, 1]])
        v = np.concatenate([edges[:, 1], edges[:, 0]])
        g = csr_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(n, n))
        g.sum_duplicates()
        g.sort_indices()
        return cls(g.indptr, g.indices, **kw)

    @property
    def h(self):
        return self.scale

    def hops_from(self, sources, max_hops=-1):
        visited, hops = kernels.bfs_hops(self.indptr, self.indices, sources, max_hops)
        out = np.full(self.n, -1, dtype=np.int64)
        out[visited] = hops
        return out

    def distances_from(self, i):
        hops = self.hops_from(i)
        d = hops * self.scale
        return np.where(hops < 0, np.inf, d)

    def ball(self, c, r):
        visited, _ = kernels.bfs_hops(self.indptr, self.indices, c, strict_hops(r, self.scale))
        return np.sort(visited)

    def within(self, sources, r):
        visited, _ = kernels.bfs_hops(self.indptr, self.indices, sources, strict_hops(r, self.scale))
        mask = np.zeros(self.n, dtype=bool)
        mask[visited] = True
        return mask

    def proximity(self):
        return self.indptr, self.indices

    def eccentricity_hops(self, v):
        return int(self.hops_from(v).max())

    @property
    def diam_hops(self):
        """Exact hop diameter by the iFUB scheme started from a double-sweep midpoint."""
        if self._diam_hops is None:
            if self.n <= 1:
                self._diam_hops = 0
            else:
                a = int(np.argmax(self.hops_from(self.root)))
                ha = self.hops_from(a)
                b = int(np.argmax(ha))
                hb = self.hops_from(b)
                lb = int(ha[b])
                on_path = np.flatnonzero((ha + hb == lb) & (ha == lb // 2))
                u = int(on_path[0]) if on_path.size else a
                hu = self.hops_from(u)
                i = int(hu.max())
                lb = max(lb, i)
                ub = 2 * i
                while ub > lb:
                    level = np.flatnonzero(hu == i)
                    bi = max(self.eccentricity_hops(int(v)) for v in level)
                    lb = max(lb, bi)
                    if lb > 2 * (i - 1):
                        break
                    ub = 2 * (i - 1)
                    i -= 1
                self._diam_hops = lb
        return self._diam_hops

    @property
    def diam(self):
        return self.diam_hops * self.scale

    def net(self, r, order=None, seeds=()):
        order = np.arange(self.n) if order is None else order
        return kernels.greedy_net_graph(self.indptr, self.indices, order, strict_hops(r, self.scale), seeds)

    def rescaled(self, factor):
        out = GraphMetricSpace(self.indptr, self.indices, self.scale * factor, self.mass, self.root, self.anchor)
        out._diam_hops = self._diam_hops
        return out

    def distance_submatrix(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty((len(idx), len(idx)))
        for a, i in enumerate(idx):
            out[a] = self.hops_from(int(i))[idx]
        if np.any(out < 0):
            raise InvalidParameter("graph is disconnected on the requested subset")
        return out * self.scale

    def subspace(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        mass = None if self.mass is None else self.mass[idx]
        return FiniteMetricSpace(self.distance_submatrix(idx), mass, 0, None, validate=False)


class EuclideanSpace(MetricSpace):
    """Points in R^d with the Euclidean metric."""

    def __init__(self, coords, mass=None, root=0, anchor=None, h=None):
        X = np.asarray(coords, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        self.coords = X
        self.n = X.shape[0]
        self.mass = _check_mass(mass, self.n)
        self.root = _check_mark(root, self.n, "root")
        self.anchor = _check_mark(anchor, self.n, "anchor")
        self.tree = cKDTree(X)
        self._h = None if h is None else float(h)
        self._prox = None
        self._diam = None

    @property
    def h(self):
        if self._h is None:
            k = min(8, self.n)
            while True:
                dd, ii = self.tree.query(self.coords, k=k)
                rows = np.repeat(np.arange(self.n), k)
                g = csr_matrix((dd.ravel(), (rows, ii.ravel())), shape=(self.n, self.n))
                b = _bottleneck(g.maximum(g.T), self.n)
                if b is not None:
                    self._h = b
                    break
                if k >= self.n:
                    raise InvalidParameter("point cloud is not connected at any scale")
                k = min(2 * k, self.n)
        return self._h

    @property
    def diam(self):
        if self._diam is None:
            X = self.coords
            if self.n <= 1:
                self._diam = 0.0
            elif X.shape[1] == 1:
                self._diam = float(X.max() - X.min())
            else:
                try:
                    pts = X[ConvexHull(X).vertices]
                except Exception:  # degenerate (collinear) input
                    pts = X
                if len(pts) > 4000:
                    pts = pts[np.argsort(np.linalg.norm(pts - pts.mean(0), axis=1))[-4000:]]
                self._diam = float(max(np.linalg.norm(pts - p, axis=1).max() for p in pts))
        return self._diam

    def distances_from(self, i):
        return np.linalg.norm(self.coords - self.coords[i], axis=1)

    def ball(self, c, r):
        return np.sort(np.asarray(self.tree.query_ball_point(self.coords[c], np.nextafter(r, 0)), dtype=np.int64))

    def within(self, sources, r):
        mask = np.zeros(self.n, dtype=bool)
        for s in np.atleast_1d(sources):
            mask[self.tree.query_ball_point(self.coords[s], np.nextafter(r, 0))] = True
        return mask

    def proximity(self):
        if self._prox is None:
            pairs = self.tree.query_pairs(self.h, output_type="ndarray")
            u = np.concatenate([pairs[:, 0], pairs[:, 1]])
            v = np.concatenate([pairs[:, 1], pairs[:, 0]])
            g = csr_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(self.n, self.n))
            g.sort_indices()
            self._prox = (g.indptr.astype(np.int32), g.indices.astype(np.int32))
        return self._prox

    def net(self, r, order=None, seeds=()):
        order = np.arange(self.n) if order is None else order
        covered = np.zeros(self.n, dtype=bool)
        selected = []
        rr = np.nextafter(r, 0)
        for c in seeds:
            selected.append(int(c))
            covered[self.tree.query_ball_point(self.coords[c], rr)] = True
        for c in order:
            if covered[c]:
                continue
            selected.append(int(c))
            covered[self.tree.query_ball_point(self.coords[c], rr)] = True
        return np.asarray(selected, dtype=np.int64)

    def rescaled(self, factor):
        return EuclideanSpace(self.coords * factor, self.mass, self.root, self.anchor,
                              None if self._h is None else self._h * factor)

    def distance_submatrix(self, idx):
        X = self.coords[np.asarray(idx, dtype=np.int64)]
        return cdist(X, X)

    def subspace(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        D = self.distance_submatrix(idx)
        return FiniteMetricSpace(D, None if self.mass is None else self.mass[idx], 0, None, validate=False)


def build_space(matrix, marks=None, h=None, mass=None):
    """Validated dense space. ``marks`` may hold ``root`` and ``anchor``."""
    marks = marks or {}
    return FiniteMetricSpace(matrix, mass=mass, root=marks.get("root", 0), anchor=marks.get("anchor"), h=h)


def ball(space, c, r):
    if r <= 0:
        raise InvalidParameter("radius must be positive")
    return space.ball(int(c), float(r))


def filled_ball(space, c, r, anchor=None):
    """Ball plus every complement component (in the proximity graph) that misses ``anchor``."""
    anchor = space.anchor if anchor is None else int(anchor)
    if anchor is None:
        raise InvalidParameter("filled ball needs an anchor point")
    inside = space.ball_mask(int(c), float(r))
    if inside[anchor]:
        raise AnchorInsideBall(f"anchor {anchor} lies in the ball of radius {r} about {c}")
    indptr, indices = space.proximity()
    outer = kernels.reach_avoiding(indptr, indices, anchor, inside)
    return np.flatnonzero(~outer)


def covering_number(space, r):
    if r <= 0:
        raise InvalidParameter("radius must be positive")
    return int(len(space.net(float(r))))


@dataclass
class NetHierarchy:
    alpha: float
    levels: list
    ordering: str = "identity"
    order: np.ndarray = field(default=None, repr=False)

    @property
    def n_max(self):
        return len(self.levels) - 1

    def radius(self, n):
        return self.alpha**n


def build_nets(space, alpha, n_max, ordering="identity", seed=None):
    """Nested greedy nets; level n is seeded with level n-1 so that each level extends the last.

    Each returned level lists the level below first, then its new points in scan order.
    """
    if not 0 < alpha <= 0.125:
        raise InvalidParameter(f"alpha must lie in (0, 1/8], got {alpha}")
    if n_max < 0:
        raise InvalidParameter("n_max must be nonnegative")
    if space.diam >= 1:
        raise DiamNotNormalized(f"diameter {space.diam} must be < 1; rescale first")
    order = space.sample_order(ordering, seed)
    levels = []
    prev = np.empty(0, dtype=np.int64)
    for n in range(n_max + 1):
        prev = space.net(alpha**n, order, prev)
        levels.append(prev)
    label = ordering if isinstance(ordering, str) else "custom"
    return NetHierarchy(alpha=float(alpha), levels=levels, ordering=label, order=order)


def normalize_diameter(space, target=0.99):
    """Rescale so the diameter equals ``target`` (< 1); returns (space, factor)."""
    d = space.diam
    if d == 0:
        return space, 1.0
    factor = target / d
    return space.rescaled(factor), factor
