"""Kernel dispatch: the compiled extension when it imports, the NumPy twin otherwise.

``set_backend("python")`` forces the fallback (used by the benchmark and by tests that
compare the two implementations).
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_active = _compiled if _compiled is not None else _fallback


def available():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def backend_name():
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def set_backend(name):
    global _active
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    elif name == "python":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")


def _i32(a):
    return np.ascontiguousarray(a, dtype=np.int32)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def floyd_warshall(D):
    """Min-plus closure of ``D`` in place; ``D`` must be C-contiguous float64."""
    _active.floyd_warshall(D)
    return D


def bfs_hops(indptr, indices, sources, max_hops=-1):
    return _active.bfs_hops(_i32(indptr), _i32(indices), _i64(np.atleast_1d(sources)), int(max_hops))


def greedy_net_graph(indptr, indices, order, cover_hops, seeds=()):
    return _active.greedy_net_graph(_i32(indptr), _i32(indices), _i64(order), int(cover_hops), _i64(seeds))


def greedy_net_dense(D, order, r, seeds=()):
    return _active.greedy_net_dense(np.ascontiguousarray(D, dtype=np.float64), _i64(order), float(r), _i64(seeds))


def reach_avoiding(indptr, indices, start, blocked):
    return _active.reach_avoiding(_i32(indptr), _i32(indices), int(start), np.ascontiguousarray(blocked, dtype=np.int8))


def node_weighted_dijkstra(indptr, indices, weight, source, allowed):
    return _active.node_weighted_dijkstra(
        _i32(indptr),
        _i32(indices),
        np.ascontiguousarray(weight, dtype=np.float64),
        np.ascontiguousarray(source, dtype=np.int8),
        np.ascontiguousarray(allowed, dtype=np.int8),
    )


def csbp_step(y, v, w, dt, scale):
    _active.csbp_step(y, np.ascontiguousarray(v), np.ascontiguousarray(w), float(dt), float(scale))
