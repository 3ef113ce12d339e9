"""Harmonic (Tutte) embeddings, Euclidean shape statistics and discrete conformal modulus.

A quadrangulation is made simplicial by subdividing it barycentrically twice; the
resulting triangulation is 3-connected, so its Tutte layout is a straight-line planar
drawing. Every small triangle remembers the quadrangle it came from, which lets regions
"union of faces incident to a vertex set" be assembled exactly.
"""

from dataclasses import dataclass, field

import numpy as np
import pyamg
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import spsolve
from scipy.spatial import ConvexHull

from .errors import (
    BadRadii,
    DegenerateFace,
    EmptySet,
    InsufficientSamples,
    InvalidParameter,
    NegativeModulus,
    NotDoublyConnected,
    SolverDiverged,
)

HARMONIC_TOL = 1e-8
DIRECT_LIMIT = 20_000
GRID_DIRECT_LIMIT = 250_000


# maps as darts --------------------------------------------------------------------------


def face_ids(next_cw):
    """Face index of every dart under d -> next_cw[d ^ 1]."""
    nd = len(next_cw)
    phi = next_cw[np.arange(nd) ^ 1]
    fid = np.full(nd, -1, dtype=np.int64)
    nf = 0
    for d0 in range(nd):
        if fid[d0] >= 0:
            continue
        d = d0
        while fid[d] < 0:
            fid[d] = nf
            d = phi[d]
        nf += 1
    return fid, nf


def subdivide(origin, next_cw):
    """Barycentric subdivision of a map given by darts.

    Old dart d spawns three edges: vertex-midpoint, vertex-corner-center and
    midpoint-face-center, stored as darts 6d..6d+5. Vertices are numbered
    [old vertices | edge midpoints | face centers].
    Returns (origin', next_cw', parent_face) where parent_face maps each new face
    to the old face containing it.
    """
    nd = len(origin)
    V = int(origin.max()) + 1
    E = nd // 2
    fid, nf = face_ids(next_cw)
    inv = np.empty(nd, dtype=np.int64)
    inv[next_cw] = np.arange(nd)
    d = np.arange(nd)
    e = d // 2
    o = np.empty(6 * nd, dtype=np.int64)
    o[6 * d] = origin
    o[6 * d + 1] = V + e
    o[6 * d + 2] = origin
    o[6 * d + 3] = V + E + fid[d ^ 1]
    o[6 * d + 4] = V + e
    o[6 * d + 5] = V + E + fid
    s = np.empty(6 * nd, dtype=np.int64)
    s[6 * d] = 6 * d + 2
    s[6 * d + 2] = 6 * next_cw
    s[6 * d + 1] = 6 * d + 4
    s[6 * d + 4] = 6 * (d ^ 1) + 1
    s[6 * d + 3] = 6 * (d ^ 1) + 5
    s[6 * d + 5] = 6 * inv + 3
    # each new triangle contains exactly one dart leaving a face center; its old face is known
    fid2, nf2 = face_ids(s)
    parent = np.empty(nf2, dtype=np.int64)
    parent[fid2[6 * d + 5]] = fid
    parent[fid2[6 * d + 3]] = fid[d ^ 1]
    return o, s, parent


def triangles_of(origin, next_cw):
    """Vertex triples (one per face) of a triangulated map, plus the dart-face index."""
    fid, nf = face_ids(next_cw)
    tri = np.full((nf, 3), -1, dtype=np.int64)
    fill = np.zeros(nf, dtype=np.int64)
    for dd in range(len(origin)):
        f = fid[dd]
        if fill[f] >= 3:
            raise DegenerateFace(f"face {f} has more than three sides")
        tri[f, fill[f]] = origin[dd]
        fill[f] += 1
    if np.any(fill != 3):
        raise DegenerateFace("subdivided map has a non-triangular face")
    return tri, fid


# embeddings -----------------------------------------------------------------------------


@dataclass
class PlanarEmbedding:
    """Straight-line drawing.

    ``coords`` holds every drawn vertex; the first ``n_orig`` are the vertices of the
    source map. ``triangles`` tile the drawing and ``tri_face`` names the source face of
    each; ``vert_faces`` lists the source faces incident to each source vertex.
    """

    coords: np.ndarray
    triangles: np.ndarray
    tri_face: np.ndarray
    vert_faces: list
    boundary: np.ndarray
    n_orig: int
    residual: float = 0.0
    iterations: int = 0
    _edge_index: dict = field(default=None, repr=False)

    @classmethod
    def from_polygons(cls, coords, faces, boundary=None):
        """Embedding whose faces are given as star-shaped polygons (fan-triangulated)."""
        coords = np.asarray(coords, dtype=np.float64)
        tris, tf = [], []
        vf = [[] for _ in range(len(coords))]
        for k, poly in enumerate(faces):
            for v in poly:
                vf[v].append(k)
            for i in range(1, len(poly) - 1):
                tris.append((poly[0], poly[i], poly[i + 1]))
                tf.append(k)
        vf = [sorted(set(x)) for x in vf]
        return cls(coords, np.asarray(tris, dtype=np.int64), np.asarray(tf, dtype=np.int64), vf,
                   np.asarray(boundary if boundary is not None else [], dtype=np.int64), len(coords))

    def to_csv_rows(self):
        return [(i, float(x), float(y)) for i, (x, y) in enumerate(self.coords[: self.n_orig])]


def _amg(L):
    """Smoothed-aggregation hierarchy for ``L``, built reproducibly.

    The setup estimates spectral radii from a random start vector drawn from numpy's
    global generator; seed it for the call and restore the caller's state afterwards.
    """
    state = np.random.get_state()
    np.random.seed(0)
    try:
        return pyamg.smoothed_aggregation_solver(L, symmetry="symmetric")
    finally:
        np.random.set_state(state)


def tutte_layout(n, edges, boundary, tol=HARMONIC_TOL):
    """Tutte layout: ``boundary`` vertices on a regular polygon of circumradius 1, every
    other vertex at the mean of its neighbours.

    Returns (coords, residual, iterations).
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    A = coo_matrix((np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
                   shape=(n, n)).tocsr()
    A.data[:] = 1.0
    A.sum_duplicates()
    A.data[:] = 1.0
    boundary = np.asarray(boundary, dtype=np.int64)
    k = len(boundary)
    if k < 3:
        raise InvalidParameter("outer boundary needs at least three vertices")
    ang = 2 * np.pi * np.arange(k) / k
    xy = np.zeros((n, 2))
    xy[boundary] = np.c_[np.cos(ang), np.sin(ang)]
    is_b = np.zeros(n, dtype=bool)
    is_b[boundary] = True
    free = np.flatnonzero(~is_b)
    deg = np.asarray(A.sum(axis=1)).ravel()
    if np.any(deg[free] == 0):
        raise DegenerateFace("isolated interior vertex")
    iters = 0
    if free.size:
        Aff = A[free][:, free]
        L = (csr_matrix((deg[free], (np.arange(free.size), np.arange(free.size))), shape=Aff.shape) - Aff).tocsr()
        rhs = A[free][:, boundary] @ xy[boundary]
        if free.size <= DIRECT_LIMIT:
            sol = spsolve(L.tocsc(), rhs)
            sol = np.asarray(sol).reshape(free.size, 2)
        else:
            ml = _amg(L)
            sol = np.empty((free.size, 2))
            for c in range(2):
                res = []
                sol[:, c] = ml.solve(rhs[:, c], tol=1e-13, maxiter=500, accel="cg", residuals=res)
                iters = max(iters, len(res))
        xy[free] = sol
    resid = 0.0
    if free.size:
        mean_nb = (A[free] @ xy) / deg[free, None]
        resid = float(np.abs(xy[free] - mean_nb).max())
    if not np.isfinite(resid) or resid > tol:
        raise SolverDiverged(f"harmonic residual {resid:.3g} exceeds {tol}", witness={"residual": resid})
    return xy, resid, iters


def tutte_embed(qmap, outer_face=0, subdivisions=2):
    """Tutte embedding of a quadrangulation through its twice-subdivided triangulation.

    ``outer_face`` indexes ``qmap.faces()``; a small triangle inside it becomes the outer
    face, with the first vertex of that face on the boundary.
    """
    origin, nxt = np.asarray(qmap.origin), np.asarray(qmap.next_cw)
    fid0, nf0 = face_ids(nxt)
    if not 0 <= outer_face < nf0:
        raise InvalidParameter(f"outer face {outer_face} out of range")
    parent = np.arange(nf0)
    o, s = origin, nxt
    for _ in range(subdivisions):
        o, s, p = subdivide(o, s)
        parent = parent[p]
    tri, fid = triangles_of(o, s)
    n = int(o.max()) + 1
    # outer triangle: one inside the chosen face that touches an original vertex
    Vq = qmap.n_vertices
    cand = np.flatnonzero((parent == outer_face) & np.any(tri < Vq, axis=1))
    outer = int(cand[0])
    keep = np.ones(len(tri), dtype=bool)
    keep[outer] = False
    edges = np.stack([o[0::2], o[1::2]], axis=1)
    xy, resid, iters = tutte_layout(n, edges, tri[outer])
    vf = [[] for _ in range(Vq)]
    q_fid = fid0
    for dd in range(len(origin)):
        vf[origin[dd]].append(int(q_fid[dd ^ 1]))
    vf = [sorted(set(x)) for x in vf]
    emb = PlanarEmbedding(xy, tri[keep], parent[keep], vf, tri[outer], Vq, resid, iters)
    return emb


def orientation_report(emb):
    """Signed-area audit of the drawn triangles.

    Tutte layouts shrink some triangles below double precision, where their computed
    orientation is noise. A flip counts as resolvable only if its area exceeds the
    rounding bound ``4 * delta * longest_edge`` with ``delta`` the coordinate error.
    """
    P = emb.coords[emb.triangles]
    a = 0.5 * ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1]))
    sign = np.sign(a[np.argmax(np.abs(a))])
    b = emb.coords[emb.boundary]
    outer = 0.5 * abs(np.dot(b[:, 0], np.roll(b[:, 1], -1)) - np.dot(b[:, 1], np.roll(b[:, 0], -1)))
    scale = max(1.0, float(np.abs(emb.coords).max()))
    delta = max(float(emb.residual), 16 * np.finfo(np.float64).eps) * scale
    longest = np.linalg.norm(P - np.roll(P, 1, axis=1), axis=2).max(axis=1)
    flipped = a * sign <= 0
    resolvable = flipped & (np.abs(a) > 4 * delta * longest)
    return {
        "triangles": int(len(a)),
        "flipped": int(flipped.sum()),
        "resolvable_flipped": int(resolvable.sum()),
        "area_error": float(abs(abs(a.sum()) - outer)),
    }


def drawing_is_proper(emb):
    """No resolvable orientation flips and the triangle areas add up to the outer polygon's."""
    r = orientation_report(emb)
    return r["resolvable_flipped"] == 0 and r["area_error"] < 1e-9


def segments_cross(P, Q):
    """Pairs (i, j) of segments P[i], Q[j] whose relative interiors cross properly."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    p0, p1 = P[:, None, 0], P[:, None, 1]
    q0, q1 = Q[None, :, 0], Q[None, :, 1]
    d1, d2 = orient(p0, p1, q0), orient(p0, p1, q1)
    d3, d4 = orient(q0, q1, p0), orient(q0, q1, p1)
    eps = 1e-12
    return (d1 * d2 < -eps) & (d3 * d4 < -eps)


# shape statistics -----------------------------------------------------------------------


def _point_segment_dist(c, A, B):
    AB = B - A
    L2 = np.einsum("ij,ij->i", AB, AB)
    t = np.clip(np.einsum("ij,ij->i", c - A, AB) / np.where(L2 > 0, L2, 1), 0, 1)
    proj = A + t[:, None] * AB
    return np.linalg.norm(proj - c, axis=1)


def _diameter(P):
    if len(P) < 2:
        return 0.0
    if len(P) > 3:
        try:
            P = P[ConvexHull(P).vertices]
        except Exception:  # collinear
            pass
    return float(max(np.linalg.norm(P - p, axis=1).max() for p in P))


def _covers(coords, T, c, tol=1e-12):
    P = coords[T]
    v0, v1 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    w = c - P[:, 0]
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    ok = den != 0
    den = np.where(ok, den, 1.0)
    s = (w[:, 0] * v1[:, 1] - w[:, 1] * v1[:, 0]) / den
    t = (v0[:, 0] * w[:, 1] - v0[:, 1] * w[:, 0]) / den
    return bool(np.any(ok & (s >= -tol) & (t >= -tol) & (s + t <= 1 + tol)))


def _face_index(emb):
    if emb._edge_index is None:
        order = np.argsort(emb.tri_face, kind="stable")
        nf = int(emb.tri_face.max()) + 1 if len(emb.tri_face) else 0
        starts = np.searchsorted(emb.tri_face[order], np.arange(nf + 1))
        emb._edge_index = {"order": order, "starts": starts}
    return emb._edge_index


def region_triangles(emb, point_set):
    """Indices of the drawn triangles lying in faces incident to ``point_set``."""
    idx = _face_index(emb)
    faces = sorted({f for v in point_set for f in emb.vert_faces[v]})
    st = idx["starts"]
    parts = [idx["order"][st[f]: st[f + 1]] for f in faces if f + 1 < len(st)]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def region_mask(emb, point_set):
    mask = np.zeros(len(emb.triangles), dtype=bool)
    mask[region_triangles(emb, point_set)] = True
    return mask


def shape_stats(emb, point_set, center):
    """(Euclidean diameter of the points, inradius and outradius about ``center`` of the
    union of faces incident to the points)."""
    point_set = np.atleast_1d(np.asarray(point_set, dtype=np.int64))
    if point_set.size == 0:
        raise EmptySet("point set is empty")
    diam = _diameter(emb.coords[point_set])
    c = emb.coords[int(center)]
    T = emb.triangles[region_triangles(emb, point_set)]
    if len(T) == 0:
        return diam, 0.0, float(np.linalg.norm(emb.coords[point_set] - c, axis=1).max())
    e = np.sort(np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
    uniq, cnt = np.unique(e, axis=0, return_counts=True)
    bd = uniq[cnt == 1]
    if not _covers(emb.coords, T, c):
        inr = 0.0
    else:
        inr = float(_point_segment_dist(c, emb.coords[bd[:, 0]], emb.coords[bd[:, 1]]).min()) if len(bd) else np.inf
    verts = np.unique(T)
    outr = float(np.linalg.norm(emb.coords[verts] - c, axis=1).max())
    outr = max(outr, float(np.linalg.norm(emb.coords[point_set] - c, axis=1).max()))
    return diam, min(inr, outr), outr


# conformal modulus ----------------------------------------------------------------------

FREE, INNER, OUTER, EXCLUDED = 1, 2, 3, 0


@dataclass
class AnnularDomainSpec:
    """Node grid: ``kind`` marks free nodes, the inner (potential 0) and outer (potential 1)
    boundary sets and excluded nodes; ``origin`` is the grid position of the centre.

    A uniform grid uses ``spacing``; a tensor-product grid passes node coordinates per axis
    in ``xs`` and ``ys`` (already centred), which then take precedence.
    """

    kind: np.ndarray
    spacing: float = 1.0
    origin: tuple = (0.0, 0.0)
    xs: np.ndarray = None
    ys: np.ndarray = None

    def axes(self):
        H, W = self.kind.shape
        xs = self.xs if self.xs is not None else (np.arange(W) - self.origin[0]) * self.spacing
        ys = self.ys if self.ys is not None else (np.arange(H) - self.origin[1]) * self.spacing
        return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)

    def positions(self):
        xs, ys = self.axes()
        return np.meshgrid(xs, ys)

    def radii(self):
        """(R1, R2): max distance of inner nodes and min distance of outer nodes from the centre."""
        x, y = self.positions()
        r = np.hypot(x, y)
        return float(r[self.kind == INNER].max()), float(r[self.kind == OUTER].min())


def _graded_axis(r_in, r_out, cells):
    # uniform core of ``cells`` steps across r_in, then steps growing like the radius
    h0 = r_in / cells
    pts = [0.0]
    while pts[-1] < r_out + 2 * h0:
        x = pts[-1]
        pts.append(x + max(h0, x * np.pi / (2 * cells)))
    half = np.asarray(pts)
    return np.r_[-half[:0:-1], half]


def round_annulus(r_in, r_out, cells=200, graded=False):
    """Grid fixture for {r_in < |z| < r_out}.

    Uniform: ``cells`` nodes per unit of r_out. Graded: ``cells`` nodes across r_in and a
    spacing proportional to the radius beyond it, which keeps large ratios affordable.
    """
    if not 0 < r_in < r_out:
        raise BadRadii("need 0 < r_in < r_out")
    if graded:
        ax = _graded_axis(r_in, r_out, cells)
        X, Y = np.meshgrid(ax, ax)
        r = np.hypot(X, Y)
        kind = np.full(r.shape, FREE, dtype=np.int8)
        kind[r <= r_in] = INNER
        kind[r >= r_out] = OUTER
        c = len(ax) // 2
        return AnnularDomainSpec(kind, 1.0, (c, c), ax, ax.copy())
    h = r_out / cells
    N = cells + 2
    c = N
    iy, ix = np.indices((2 * N + 1, 2 * N + 1))
    r = np.hypot(ix - c, iy - c) * h
    kind = np.full(r.shape, FREE, dtype=np.int8)
    kind[r <= r_in] = INNER
    kind[r >= r_out] = OUTER
    return AnnularDomainSpec(kind, h, (c, c))


def _dual_lengths(ax):
    d = np.diff(ax)
    return np.r_[d[0] / 2, (d[:-1] + d[1:]) / 2, d[-1] / 2] if len(ax) > 1 else np.ones(1)


def _grid_edges(kind, xs=None, ys=None):
    """Grid edges (a, b) and their conductances (dual length over edge length)."""
    live = kind != EXCLUDED
    H, W = kind.shape
    idx = np.arange(H * W).reshape(H, W)
    mh = live[:, :-1] & live[:, 1:]
    mv = live[:-1, :] & live[1:, :]
    a = np.r_[idx[:, :-1][mh], idx[:-1, :][mv]]
    b = np.r_[idx[:, 1:][mh], idx[1:, :][mv]]
    if xs is None:
        return a, b, np.ones(len(a))
    wh = _dual_lengths(ys)[:, None] / np.diff(xs)[None, :]
    wv = _dual_lengths(xs)[None, :] / np.diff(ys)[:, None]
    return a, b, np.r_[wh[mh], wv[mv]]


def _check_doubly_connected(kind):
    from scipy.ndimage import label

    free_like = (kind == FREE)
    inner = kind == INNER
    outer = kind == OUTER
    if not inner.any() or not outer.any():
        raise NotDoublyConnected("both boundary sets must be nonempty")
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    lab, k = label(inner, structure=four)
    if k != 1:
        raise NotDoublyConnected(f"inner boundary has {k} components")
    lab, k = label(free_like | inner | outer, structure=four)
    if len(np.unique(lab[inner])) != 1 or np.unique(lab[inner])[0] not in np.unique(lab[outer]):
        raise NotDoublyConnected("inner and outer boundaries are not joined through the domain")


@dataclass
class ModulusReport:
    m: float
    energy: float
    iterations: int
    residual: float

    def to_dict(self):
        return {"m": self.m, "energy": self.energy, "iterations": self.iterations, "residual": self.residual}


def grid_modulus(domain, tol=1e-10):
    """Modulus 1/E of the discrete harmonic potential (0 inside, 1 outside), 5-point stencil."""
    kind = domain.kind
    _check_doubly_connected(kind)
    if domain.xs is None and domain.ys is None:
        a, b, w = _grid_edges(kind)
    else:
        a, b, w = _grid_edges(kind, *domain.axes())
    N = kind.size
    flat = kind.ravel()
    free = np.flatnonzero(flat == FREE)
    fixed_val = np.where(flat == OUTER, 1.0, 0.0)
    pos = np.full(N, -1, dtype=np.int64)
    pos[free] = np.arange(free.size)
    u = fixed_val.copy()
    iters, resid = 0, 0.0
    if free.size:
        ai, bi = pos[a], pos[b]
        both = (ai >= 0) & (bi >= 0)
        deg = np.bincount(np.r_[ai[ai >= 0], bi[bi >= 0]], weights=np.r_[w[ai >= 0], w[bi >= 0]],
                          minlength=free.size)
        off = coo_matrix((-np.r_[w[both], w[both]], (np.r_[ai[both], bi[both]], np.r_[bi[both], ai[both]])),
                         shape=(free.size, free.size))
        L = (off + coo_matrix((deg, (np.arange(free.size), np.arange(free.size))), shape=off.shape)).tocsr()
        rhs = np.zeros(free.size)
        m1 = (ai >= 0) & (bi < 0)
        np.add.at(rhs, ai[m1], w[m1] * fixed_val[b[m1]])
        m2 = (bi >= 0) & (ai < 0)
        np.add.at(rhs, bi[m2], w[m2] * fixed_val[a[m2]])
        if free.size <= GRID_DIRECT_LIMIT:
            sol = spsolve(L.tocsc(), rhs)
            iters = 1
        else:
            ml = _amg(L)
            res = []
            sol = ml.solve(rhs, tol=tol, maxiter=1000, accel="cg", residuals=res)
            iters = len(res)
        resid = float(np.linalg.norm(L @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if not np.isfinite(resid) or resid > max(tol, 1e-12) * 10:
            raise SolverDiverged(f"relative residual {resid:.3g}", witness={"residual": resid})
        u[free] = sol
    E = float(np.sum(w * (u[a] - u[b]) ** 2))
    if E <= 0:
        raise NotDoublyConnected("zero energy: boundaries are not separated")
    return ModulusReport(1.0 / E, E, iters, resid)


def teichmuller_bounds(m):
    if m < 0:
        raise NegativeModulus("modulus must be nonnegative")
    q = np.exp(2 * np.pi * m)
    return float(q / 16 - 1), float(q)


def modulus_from_ratio(r_out, r_in):
    """Modulus of the round annulus between the radii (a lower bound for any domain containing it)."""
    if not (r_in > 0 and r_out >= r_in):
        raise BadRadii("need r_out >= r_in > 0")
    return float(np.log(r_out / r_in) / (2 * np.pi))


def modulus_moment_probe(moduli, eps, p):
    """Monte Carlo E[exp(-2 pi m_eps p)] per scale with standard errors, and the fitted
    slope of log-estimate against log eps.

    ``moduli`` has one row per sample and one column per entry of ``eps``.
    """
    M = np.asarray(moduli, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 2:
        raise InsufficientSamples("need at least two samples")
    if p < 0:
        raise InvalidParameter("p must be nonnegative")
    vals = np.exp(-2 * np.pi * np.maximum(M, 0) * p)
    est = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(M.shape[0])
    ok = est > 0
    slope, slope_se = float("nan"), float("nan")
    if ok.sum() >= 2:
        x, y = np.log(eps[ok]), np.log(est[ok])
        if ok.sum() >= 3:
            coef, cov = np.polyfit(x, y, 1, cov=True)
            slope, slope_se = float(coef[0]), float(np.sqrt(cov[0, 0]))
        else:
            slope = float(np.polyfit(x, y, 1)[0])
    return {"eps": eps.tolist(), "estimate": est.tolist(), "se": se.tolist(), "slope": slope, "slope_se": slope_se}
