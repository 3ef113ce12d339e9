"""Space files, JSON sidecars and run manifests.

Dense files (version 1): magic ``CDIM``, u32 version, u64 n, then n*n little-endian f64
distances row-major. Graph files (version 2) keep the metric implicit: u64 n, u64 nnz, f64
edge length, then i64 indptr and i32 indices.
"""

import hashlib
import json
import os
import struct

import numpy as np

from . import __version__
from .errors import InvalidParameter
from .metric import FiniteMetricSpace, GraphMetricSpace

MAGIC = b"CDIM"


def write_space(space, path):
    """Write the space file and its ``.json`` sidecar; returns the sidecar path."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        if isinstance(space, GraphMetricSpace):
            indptr = np.asarray(space.indptr, dtype="<i8")
            indices = np.asarray(space.indices, dtype="<i4")
            fh.write(struct.pack("<IQQd", 2, space.n, len(indices), float(space.scale)))
            fh.write(indptr.tobytes())
            fh.write(indices.tobytes())
        elif isinstance(space, FiniteMetricSpace):
            fh.write(struct.pack("<IQ", 1, space.n))
            fh.write(np.ascontiguousarray(space.dist, dtype="<f8").tobytes())
        else:
            raise InvalidParameter(f"cannot serialise {type(space).__name__}")
    side = sidecar_path(path)
    meta = {"root": int(space.root), "anchor": None if space.anchor is None else int(space.anchor),
            "h": float(space.h), "mass": None if space.mass is None else [float(m) for m in space.mass]}
    write_json(side, meta)
    return side


def sidecar_path(path):
    return os.path.splitext(str(path))[0] + ".json"


def read_space(path, validate=False):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise InvalidParameter(f"{path} is not a space file")
    (version,) = struct.unpack_from("<I", data, 4)
    side = sidecar_path(path)
    meta = json.load(open(side)) if os.path.exists(side) else {}
    mass = None if meta.get("mass") is None else np.asarray(meta["mass"], dtype=np.float64)
    marks = {"mass": mass, "root": meta.get("root", 0), "anchor": meta.get("anchor")}
    if version == 1:
        (n,) = struct.unpack_from("<Q", data, 8)
        D = np.frombuffer(data, dtype="<f8", count=n * n, offset=16).reshape(n, n).astype(np.float64)
        return FiniteMetricSpace(D, h=meta.get("h"), validate=validate, **marks)
    if version == 2:
        n, nnz, scale = struct.unpack_from("<QQd", data, 8)
        off = 32
        indptr = np.frombuffer(data, dtype="<i8", count=n + 1, offset=off).astype(np.int64)
        indices = np.frombuffer(data, dtype="<i4", count=nnz, offset=off + 8 * (n + 1)).astype(np.int32)
        return GraphMetricSpace(indptr, indices, scale=scale, **marks)
    raise InvalidParameter(f"unsupported space file version {version}")


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o) if np.isfinite(o) else str(float(o))
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _clean(o):
    # JSON has no inf/nan; write them as strings
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj):
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_default, allow_nan=True))),
                      sort_keys=True, indent=2)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def blob_hash(path):
    """Git-style blob hash of a file's contents."""
    data = open(path, "rb").read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=_default).encode()).hexdigest()


def write_manifest(outdir, config, inputs=(), outputs=()):
    path = os.path.join(outdir, "manifest.json")
    old = read_json(path) if os.path.exists(path) else {}
    files = dict(old.get("outputs", {}))
    for f in outputs:
        files[os.path.basename(f)] = blob_hash(f)
    man = {
        "tool": "confdim",
        "version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {os.path.basename(f): blob_hash(f) for f in inputs} or old.get("inputs", {}),
        "outputs": dict(sorted(files.items())),
    }
    write_json(path, man)
    return path
