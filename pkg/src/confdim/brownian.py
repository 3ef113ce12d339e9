"""Desk-scale Brownian sphere instances.

Two sources:

* the discretized Brownian snake, glued into a metric by min-plus closure of the
  label pseudo-distance;
* uniform quadrangulations built from uniformly labeled plane trees by the
  Cori-Vauquelin-Schaeffer bijection, with their graph metric.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import BackendTooLarge, InvalidParameter, AnchorInsideBall
from .metric import FiniteMetricSpace, GraphMetricSpace, filled_ball

DENSE_MAX_STEPS = 4000
MERGE_TOL = 1e-9


@dataclass
class ExcursionPath:
    values: np.ndarray

    @property
    def n_steps(self):
        return len(self.values) - 1


@dataclass
class SnakeLabels:
    values: np.ndarray

    @property
    def argmin(self):
        return int(np.argmin(self.values))


@dataclass
class ContourTree:
    """Plane tree coded by a contour: ``vertex_of_time[i]`` is the vertex visited at time i."""

    vertex_of_time: np.ndarray
    parent: np.ndarray
    height: np.ndarray

    @property
    def n_vertices(self):
        return len(self.parent)


def sample_excursion(n, seed=None):
    """Uniform Dyck path of length n, scaled by 1/sqrt(n).

    A uniform arrangement of n/2 up-steps and n/2+1 down-steps is rotated to start just
    after its first minimum (cycle lemma); dropping the final down-step leaves a uniform
    excursion.
    """
    n = int(n)
    if n < 2 or n % 2:
        raise InvalidParameter(f"excursion length must be even and >= 2, got {n}")
    rng = np.random.default_rng(seed)
    k = n // 2
    steps = np.concatenate([np.ones(k, dtype=np.int64), -np.ones(k + 1, dtype=np.int64)])
    steps = rng.permutation(steps)
    start = int(np.argmin(np.cumsum(steps))) + 1
    steps = np.roll(steps, -start)[:n]
    heights = np.concatenate([[0], np.cumsum(steps)])
    return ExcursionPath(heights / np.sqrt(n))


def contour_tree(X):
    """Real tree coded by a piecewise-linear contour X; descents landing mid-edge insert a vertex."""
    X = np.asarray(X, dtype=np.float64)
    if X[0] != 0 or X[-1] != 0 or np.any(X < 0):
        raise InvalidParameter("contour must start and end at 0 and stay nonnegative")
    vot = np.empty(len(X), dtype=np.int64)
    parent = [-1]
    height = [0.0]
    stack = [0]
    vot[0] = 0
    for i in range(1, len(X)):
        x, prev = X[i], X[i - 1]
        if x > prev:
            parent.append(stack[-1])
            height.append(x)
            stack.append(len(parent) - 1)
        elif x < prev:
            while len(stack) > 1 and height[stack[-2]] >= x:
                stack.pop()
            top = stack[-1]
            if height[top] != x:
                w = len(parent)
                parent.append(parent[top])
                height.append(x)
                parent[top] = w
                stack[-1] = w
        vot[i] = stack[-1]
    return ContourTree(vot, np.asarray(parent, dtype=np.int64), np.asarray(height))


def _first_times(tree):
    first = np.full(tree.n_vertices, -1, dtype=np.int64)
    for i in range(len(tree.vertex_of_time) - 1, -1, -1):
        first[tree.vertex_of_time[i]] = i
    return first


def snake_covariance(X, tree=None):
    """Covariance of the vertex labels (root excluded): height of the common ancestor."""
    X = np.asarray(X, dtype=np.float64)
    tree = tree or contour_tree(X)
    t = _first_times(tree)[1:]
    order = np.argsort(t)
    ts = t[order]
    C = np.empty((len(ts), len(ts)))
    for a, ta in enumerate(ts):
        run = np.minimum.accumulate(X[ta:])
        C[a, a:] = run[ts[a:] - ta]
        C[a:, a] = C[a, a:]
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return C[np.ix_(inv, inv)]


def sample_snake(X, seed=None, backend="tree", size=None):
    """Conditional Gaussian labels given the contour.

    ``tree`` adds independent Gaussian increments along tree edges; ``dense`` factors the
    full covariance. ``size`` draws several independent label vectors at once.
    """
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    n = len(X) - 1
    if backend == "dense" and n > DENSE_MAX_STEPS:
        raise BackendTooLarge(f"dense backend supports up to {DENSE_MAX_STEPS} steps, got {n}")
    tree = contour_tree(X)
    rng = np.random.default_rng(seed)
    m = 1 if size is None else int(size)
    V = tree.n_vertices
    labels = np.zeros((m, V))
    if V > 1:
        if backend == "tree":
            edge_var = tree.height[1:] - tree.height[tree.parent[1:]]
            incr = rng.standard_normal((m, V - 1)) * np.sqrt(edge_var)
            for v in np.argsort(tree.height, kind="stable"):
                if v:
                    labels[:, v] = labels[:, tree.parent[v]] + incr[:, v - 1]
        elif backend == "dense":
            L = cholesky(snake_covariance(X, tree), lower=True)
            labels[:, 1:] = rng.standard_normal((m, V - 1)) @ L.T
        else:
            raise InvalidParameter(f"unknown snake backend {backend!r}")
    Z = labels[:, tree.vertex_of_time]
    return SnakeLabels(Z[0] if size is None else Z)


def dzero(X, Z, i, j):
    """Label pseudo-distance between contour times i and j."""
    Z = np.asarray(getattr(Z, "values", Z), dtype=np.float64)
    i, j = sorted((int(i), int(j)))
    inner = Z[i:j + 1].min()
    outer = min(Z[:i + 1].min(), Z[j:].min())
    return float(Z[i] + Z[j] - 2 * max(inner, outer))


def dzero_matrix(Z):
    Z = np.asarray(getattr(Z, "values", Z), dtype=np.float64)
    N = len(Z)
    pre = np.minimum.accumulate(Z)
    suf = np.minimum.accumulate(Z[::-1])[::-1]
    D = np.empty((N, N))
    for i in range(N):
        inner = np.minimum.accumulate(Z[i:])
        outer = np.minimum(pre[i], suf[i:])
        D[i, i:] = Z[i] + Z[i:] - 2 * np.maximum(inner, outer)
        D[i:, i] = D[i, i:]
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def quotient_metric(X, Z):
    """Largest pseudometric below the label pseudo-distance, as a finite metric space.

    Contour times that code the same tree vertex are glued first. Points at distance
    <= 1e-9 are merged. Each contour time carries mass 1/n. The returned space has
    ``time_class`` mapping every contour time to its point.
    """
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    Z = np.asarray(getattr(Z, "values", Z), dtype=np.float64)
    if len(X) != len(Z):
        raise InvalidParameter("contour and labels must have equal length")
    n = len(X) - 1
    tree = contour_tree(X)
    vot = tree.vertex_of_time
    V = tree.n_vertices
    order = np.argsort(vot, kind="stable")
    starts = np.searchsorted(vot[order], np.arange(V))
    Dt = dzero_matrix(Z)[np.ix_(order, order)]
    Dv = np.minimum.reduceat(np.minimum.reduceat(Dt, starts, axis=0), starts, axis=1)
    Dv = np.ascontiguousarray(np.minimum(Dv, Dv.T))
    np.fill_diagonal(Dv, 0.0)
    kernels.floyd_warshall(Dv)

    close = csr_matrix(Dv <= MERGE_TOL)
    _, comp = connected_components(close, directed=False)
    # relabel classes by first contour appearance for a stable numbering
    first_seen = {}
    for v in vot:
        first_seen.setdefault(comp[v], len(first_seen))
    cls_of_vertex = np.array([first_seen[c] for c in comp], dtype=np.int64)
    k = len(first_seen)
    reps = np.empty(k, dtype=np.int64)
    reps[cls_of_vertex[::-1]] = np.arange(V)[::-1]
    D = np.ascontiguousarray(Dv[np.ix_(reps, reps)])
    mass = np.bincount(cls_of_vertex[vot[:n]], minlength=k) / n if n else np.ones(1)
    time_class = cls_of_vertex[vot]
    space = FiniteMetricSpace(
        D, mass=mass, root=int(time_class[0]), anchor=int(time_class[int(np.argmin(Z))]), validate=False
    )
    space.time_class = time_class
    return space


# quadrangulations -----------------------------------------------------------------------


@dataclass
class QuadMap:
    """Rooted quadrangulation stored as darts.

    Dart ``d`` leaves ``origin[d]``; ``d ^ 1`` is its reverse; ``next_cw[d]`` is the next
    dart leaving the same vertex in rotation order.
    """

    n_faces: int
    origin: np.ndarray
    next_cw: np.ndarray
    root_dart: int = 0
    labels: np.ndarray = field(default=None, repr=False)
    _graph: GraphMetricSpace = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return int(self.origin.max()) + 1 if len(self.origin) else 1

    @property
    def n_edges(self):
        return len(self.origin) // 2

    @property
    def target(self):
        return self.origin[np.arange(len(self.origin)) ^ 1]

    @property
    def root_vertex(self):
        return int(self.origin[self.root_dart])

    @property
    def pointed_vertex(self):
        return self.n_vertices - 1

    def faces(self):
        """Dart cycles of the face permutation ``d -> next_cw[d ^ 1]``."""
        nd = len(self.origin)
        seen = np.zeros(nd, dtype=bool)
        out = []
        for d0 in range(nd):
            if seen[d0]:
                continue
            cyc = []
            d = d0
            while not seen[d]:
                seen[d] = True
                cyc.append(d)
                d = int(self.next_cw[d ^ 1])
            out.append(cyc)
        return out

    def graph(self, scale=1.0):
        """Simple-graph metric (multi-edges collapsed) with mass 1/V per vertex."""
        if self._graph is None or self._graph.scale != scale:
            V = self.n_vertices
            edges = np.stack([self.origin[0::2], self.origin[1::2]], axis=1)
            self._graph = GraphMetricSpace.from_edges(
                V, edges, scale=scale, mass=np.full(V, 1.0 / V), root=self.root_vertex, anchor=self.pointed_vertex
            )
        return self._graph

    def root_distances(self):
        return self.graph().hops_from(self.root_vertex)

    def to_json(self):
        edges = [[int(self.origin[d]), int(self.origin[d ^ 1]), int(self.next_cw[d])] for d in range(len(self.origin))]
        return {"F": int(self.n_faces), "root_edge": int(self.root_dart), "edges": edges}

    @classmethod
    def from_json(cls, obj):
        e = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 3)
        return cls(int(obj["F"]), e[:, 0].copy(), e[:, 2].copy(), int(obj["root_edge"]))


def _dyck_contour(F, rng):
    X = sample_excursion(2 * F, rng).values * np.sqrt(2 * F)
    return np.rint(X).astype(np.int64)


def sample_quadrangulation(F, seed=None):
    """Uniform rooted quadrangulation with F faces (vertex F+1 is the distinguished point)."""
    F = int(F)
    if F < 1:
        raise InvalidParameter("need at least one face")
    rng = np.random.default_rng(seed)
    H = _dyck_contour(F, rng)
    tree = contour_tree(H.astype(np.float64))
    V_tree = tree.n_vertices
    incr = rng.integers(-1, 2, size=V_tree - 1)
    lab = np.zeros(V_tree, dtype=np.int64)
    for v in range(1, V_tree):  # parents precede children in creation order
        lab[v] = lab[tree.parent[v]] + incr[v - 1]
    ncorner = 2 * F
    cv = tree.vertex_of_time[:ncorner]
    cl = lab[cv]
    lo = int(cl.min())
    vstar = V_tree

    # successor: first later corner (cyclically) whose label is one less
    succ = np.full(ncorner, -1, dtype=np.int64)
    nxt = {}
    for k in range(2 * ncorner - 1, -1, -1):
        c = k % ncorner
        if k < ncorner:
            succ[c] = nxt.get(cl[c] - 1, -1)
        nxt[cl[c]] = k
    fwd = np.where(succ >= 0, succ - np.arange(ncorner), 0)
    succ = np.where(succ >= 0, succ % ncorner, -1)

    # arc a leaves corner a; dart 2a at the corner's vertex, dart 2a+1 at the target
    origin = np.empty(2 * ncorner, dtype=np.int64)
    origin[0::2] = cv
    origin[1::2] = np.where(succ >= 0, cv[np.maximum(succ, 0)], vstar)

    # rotation at each corner: darts ordered by decreasing forward distance to the far end
    wedge = [[] for _ in range(ncorner)]
    for a in range(ncorner):
        if succ[a] >= 0:
            wedge[a].append((fwd[a], 2 * a))
            wedge[succ[a]].append((ncorner - fwd[a], 2 * a + 1))
        else:
            wedge[a].append((0, 2 * a))
    ring = [[] for _ in range(V_tree + 1)]
    for c in range(ncorner):
        ring[cv[c]].extend(d for _, d in sorted(wedge[c], reverse=True))
    ring[vstar] = [2 * a + 1 for a in range(ncorner - 1, -1, -1) if succ[a] < 0]
    next_cw = np.empty(2 * ncorner, dtype=np.int64)
    for darts in ring:
        for i, d in enumerate(darts):
            next_cw[d] = darts[(i + 1) % len(darts)]
    return QuadMap(F, origin, next_cw, 0, labels=np.concatenate([lab, [lo - 1]]))


def hull_boundary_area(space, c, anchor, t, eps):
    """eps^-2 times the mass between the filled ball of radius t and the ball of radius t+eps."""
    if t <= 0 or eps <= 0:
        raise InvalidParameter("t and eps must be positive")
    if space.mass is None:
        raise InvalidParameter("space has no mass")
    outer = space.ball_mask(int(c), t + eps)
    if outer[int(anchor)]:
        raise AnchorInsideBall(f"anchor {anchor} lies within distance t+eps of the center")
    hull = np.zeros(space.n, dtype=bool)
    hull[filled_ball(space, c, t, anchor)] = True
    return float(space.mass[outer & ~hull].sum()) / eps**2
