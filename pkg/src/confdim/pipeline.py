"""Stage runner behind the command line: sample, fill, weigh, deform, dims, verify.

Each stage reads what it needs from the output directory (or from memory when run in one
process) and writes its artifacts there. Random choices draw from child seeds of the
configured seed, one per stage, so stages can be rerun in isolation.
"""

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dimension, filling, planar, weights
from .brownian import QuadMap, quotient_metric, sample_excursion, sample_quadrangulation, sample_snake
from .errors import ConfdimError, DegenerateRange, InvalidParameter, MissingEmbedding, PoorFit
from .io import read_json, read_space, write_json, write_manifest, write_space
from .metric import FiniteMetricSpace, build_nets, normalize_diameter

STAGES = ("sample", "fill", "weigh", "deform", "dims")
STAGE_ALIASES = {"filling": "fill", "weights": "weigh", "deformation": "deform", "dimension": "dims"}
SEED_SLOTS = {"sample": 0, "subsample": 1, "nets": 2, "fill": 3, "weigh": 4, "dims": 5}


@dataclass
class PipelineConfig:
    source: str = "snake"
    n: int = 1000
    faces: int = 2000
    alpha: float = 0.125
    eta: float = 0.01
    zeta: float = 0.1
    n_max: int = 4
    epsilon: float = 1.0
    strategy: str = None
    seed: int = 0
    points: int = 2000
    ordering: str = "mass"
    h3_paths: int = 1000
    gromov_samples: int = 1000
    workers: int = 1
    stages: list = field(default_factory=lambda: list(STAGES))

    def __post_init__(self):
        if self.strategy is None:
            self.strategy = "metric_only" if self.source == "snake" else "ratio_with_event"
        self.stages = [STAGE_ALIASES.get(s, s) for s in self.stages]

    def validate(self):
        if self.source not in ("snake", "quad"):
            raise InvalidParameter(f"source must be snake or quad, got {self.source!r}")
        if not 0 < self.alpha <= 0.125:
            raise InvalidParameter(f"alpha must lie in (0, 1/8], got {self.alpha}")
        if not 0 < self.eta < 0.5:
            raise InvalidParameter(f"eta must lie in (0, 1/2), got {self.eta}")
        if not 0 < self.zeta < 1:
            raise InvalidParameter(f"zeta must lie in (0, 1), got {self.zeta}")
        if not 0 < self.epsilon <= 1:
            raise InvalidParameter(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.n_max < 1:
            raise InvalidParameter("n_max must be at least 1")
        if self.strategy not in weights.STRATEGIES:
            raise InvalidParameter(f"unknown strategy {self.strategy!r}")
        if self.points < 2:
            raise InvalidParameter("need at least two boundary points")
        for s in self.stages:
            if s not in STAGES:
                raise InvalidParameter(f"unknown stage {s!r}")
        return self

    def hashed(self):
        """The fields that determine results (worker count and stage list excluded)."""
        d = asdict(self)
        d.pop("workers")
        d.pop("stages")
        return d

    def child_seed(self, slot):
        return int(np.random.SeedSequence([int(self.seed), SEED_SLOTS[slot]]).generate_state(1)[0])


class StageError(ConfdimError):
    code = "stage_failed"


class Run:
    """Lazily loaded pipeline state bound to an output directory."""

    def __init__(self, config, outdir):
        self.config = config.validate()
        self.outdir = str(outdir)
        os.makedirs(self.outdir, exist_ok=True)
        self._cache = {}
        self.verify = {}

    def path(self, name):
        return os.path.join(self.outdir, name)

    def _get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def manifest(self, outputs):
        write_manifest(self.outdir, self.config.hashed(), outputs=[self.path(o) for o in outputs])

    # sample ---------------------------------------------------------------------------
    def stage_sample(self):
        c = self.config
        seed = c.child_seed("sample")
        outputs = ["space.cdim", "space.json"]
        if c.source == "snake":
            X = sample_excursion(c.n, seed=seed)
            Z = sample_snake(X, seed=seed + 1)
            space, _ = normalize_diameter(quotient_metric(X, Z))
            write_json(self.path("snake.json"), {"contour": X.values, "labels": Z.values})
            outputs.append("snake.json")
        else:
            q = sample_quadrangulation(c.faces, seed=seed)
            space, _ = normalize_diameter(q.graph())
            write_json(self.path("map.json"), q.to_json())
            outputs.append("map.json")
            self._cache["qmap"] = q
        write_space(space, self.path("space.cdim"))
        self._cache["space"] = space
        self.manifest(outputs)
        return outputs

    @property
    def space(self):
        return self._get("space", lambda: read_space(self.path("space.cdim")))

    @property
    def qmap(self):
        if self.config.source != "quad":
            return None
        if "qmap" not in self._cache and not os.path.exists(self.path("map.json")):
            return None
        return self._get("qmap", lambda: QuadMap.from_json(read_json(self.path("map.json"))))

    # fill -----------------------------------------------------------------------------
    def boundary_space(self):
        """The space the filling is built on: the sampled space itself, or for a map a
        mass-weighted subsample of ``points`` vertices (root and distinguished vertex kept)."""

        def make():
            sp = self.space
            c = self.config
            if c.source == "snake" or sp.n <= c.points:
                return sp, np.arange(sp.n)
            order = sp.sample_order("mass", c.child_seed("subsample"))
            keep = [sp.root, sp.anchor]
            keep += [int(v) for v in order if v not in (sp.root, sp.anchor)][: c.points - 2]
            idx = np.sort(np.asarray(keep, dtype=np.int64))
            D = sp.distance_submatrix(idx)
            pos = {int(v): i for i, v in enumerate(idx)}
            sub = FiniteMetricSpace(D, mass=np.full(len(idx), 1.0 / len(idx)), root=pos[sp.root],
                                    anchor=pos[sp.anchor], h=None, validate=False)
            return sub, idx

        return self._get("boundary", make)

    def stage_fill(self):
        c = self.config
        sp, idx = self.boundary_space()
        nets = build_nets(sp, c.alpha, c.n_max, c.ordering, seed=c.child_seed("nets"))
        fg = filling.build_filling(sp, nets)
        self._cache["filling"] = fg
        write_json(self.path("nets.json"), {"alpha": c.alpha, "levels": [lv.tolist() for lv in nets.levels],
                                            "vertex_of": idx.tolist()})
        fg.write_edges_csv(self.path("edges.csv"))
        s = c.child_seed("fill")
        rep = {
            "sizes": fg.sizes.tolist(),
            "path_condition": filling.check_path_condition(fg),
            "gromov": filling.estimate_delta(fg, c.gromov_samples, seed=s).to_dict(),
            "sandwich": filling.sandwich_constants(fg, c.gromov_samples, seed=s + 1).to_dict(),
        }
        write_json(self.path("filling.json"), rep)
        self.verify["filling"] = rep
        self.manifest(["nets.json", "edges.csv", "filling.json"])
        return rep

    @property
    def filling(self):
        def make():
            sp, _ = self.boundary_space()
            saved = read_json(self.path("nets.json"))
            from .metric import NetHierarchy

            nets = NetHierarchy(saved["alpha"], [np.asarray(lv, dtype=np.int64) for lv in saved["levels"]])
            return filling.build_filling(sp, nets)

        return self._get("filling", make)

    # weigh ----------------------------------------------------------------------------
    def geometry(self):
        def make():
            q = self.qmap
            if q is None:
                return None
            vstar = q.pointed_vertex
            fid, _ = planar.face_ids(np.asarray(q.next_cw))
            d = int(np.flatnonzero(np.asarray(q.origin) == vstar)[0])
            emb = planar.tutte_embed(q, outer_face=int(fid[d ^ 1]))
            _, idx = self.boundary_space()
            with open(self.path("embedding.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["vertex_id", "x", "y"])
                w.writerows(emb.to_csv_rows())
            return weights.EmbeddedGeometry(self.space, emb, vertex_of=idx, anchor=vstar)

        return self._get("geometry", make)

    def stage_weigh(self):
        c = self.config
        fg = self.filling
        geo = self.geometry() if c.source == "quad" else None
        if c.strategy != "metric_only" and geo is None:
            raise MissingEmbedding(f"strategy {c.strategy!r} needs the map embedding (source=quad)")
        st = weights.default_sigma(fg, geo, c.zeta, c.strategy, c.eta)
        raw_sigma = st.sigma.copy()
        st.sigma, margin_rep = weights.repair_sigma(fg, st.sigma)
        st.nu, st.mu = weights.compute_nu_mu(fg, st.sigma, c.eta)
        st.parent, parent_rep = weights.choose_parents(fg)
        st.log_pi, st.log_pi_prime, st.rho = weights.regularize_pi(fg, st.mu, st.parent, c.eta)
        axioms = weights.check_H_axioms(fg, st, c.h3_paths, seed=c.child_seed("weigh"), raise_on_violation=False)
        if geo is not None:
            st.varsigma, st.log_varpi, varpi_rep = weights.varsigma_varpi(fg, geo, st)
        else:
            varpi_rep = {"skipped": "no planar embedding for this source"}
        self._cache["state"] = st
        st.write_csv(fg, self.path("weights.csv"))
        margins = weights.all_margins(fg, st.sigma)
        lv = fg.level_of()
        ceiling = st.log_pi - lv * np.log1p(-c.eta)
        rep = {
            "sigma_log": st.log,
            "sigma_raised": int(np.sum(st.sigma[1:] != raw_sigma[1:])),
            "margins": margin_rep,
            "min_margin": min((float(m.min()) for m in margins if m.size), default=float("inf")),
            "parents": parent_rep,
            "regularization": {"violations": 0},
            "axioms": axioms,
            "pi_ceiling_violations": int(np.sum(ceiling > 1e-12 * (1 + np.abs(st.log_pi)))),
            "varpi": varpi_rep,
        }
        write_json(self.path("margins.json"), margin_rep)
        write_json(self.path("weights.json"), rep)
        self.verify["weights"] = rep
        outs = ["weights.csv", "margins.json", "weights.json"]
        if geo is not None:
            outs.append("embedding.csv")
        self.manifest(outs)
        return rep

    @property
    def state(self):
        def make():
            c = self.config
            fg = self.filling
            cols = {k: [] for k in ("sigma", "nu", "mu", "log_pi", "rho", "varsigma", "log_varpi")}
            with open(self.path("weights.csv")) as fh:
                for row in csv.DictReader(fh):
                    for k in cols:
                        cols[k].append(float(row[k]))
            st = weights.WeightState(eta=c.eta, zeta=c.zeta, **{k: np.asarray(v) for k, v in cols.items()})
            st.parent, _ = weights.choose_parents(fg)
            return st

        return self._get("state", make)

    # deform ---------------------------------------------------------------------------
    def stage_deform(self):
        c = self.config
        fg, st = self.filling, self.state
        out = {}
        for m in weights.METHODS:
            bm = weights.boundary_metric(fg, st, c.epsilon, m)
            self._cache[f"bm_{m}"] = bm
            V = bm.values
            off = V[~np.eye(len(V), dtype=bool)]
            out[m] = {"symmetric": bool(np.array_equal(V, V.T)), "zero_diagonal": bool(np.all(np.diag(V) == 0)),
                      "positive_off_diagonal": bool(np.all(off > 0)) if off.size else True,
                      "min": float(off.min()) if off.size else 0.0, "max": float(off.max()) if off.size else 0.0}
        lo, hi = self._cache["bm_graph_path_lower"].values, self._cache["bm_graph_path_upper"].values
        out["lower_le_upper"] = bool(np.all(lo <= hi * (1 + 1e-12)))
        pc = self._cache["bm_pi_comparator"].values
        mask = ~np.eye(len(pc), dtype=bool)
        if mask.any():
            ratio = hi[mask] / pc[mask]
            out["upper_over_comparator"] = {"min": float(ratio.min()), "max": float(ratio.max())}
        write_space(FiniteMetricSpace(pc, validate=False), self.path("boundary.cdim"))
        write_json(self.path("deform.json"), out)
        self.verify["deform"] = out
        self.manifest(["boundary.cdim", "boundary.json", "deform.json"])
        return out

    def boundary(self):
        key = "bm_pi_comparator"
        if key not in self._cache:
            sp = read_space(self.path("boundary.cdim"))
            self._cache[key] = weights.BoundaryMetric(self.config.epsilon, "pi_comparator",
                                                      self.filling.points, sp.dist)
        return self._cache[key]

    # dims -----------------------------------------------------------------------------
    def stage_dims(self):
        c = self.config
        fg, st = self.filling, self.state
        sp = self.space
        rng = np.random.default_rng(c.child_seed("dims"))
        out = {}

        def fit(name, fn):
            try:
                out[name] = fn().to_dict()
            except (PoorFit, DegenerateRange) as e:
                out[name] = {"error": e.to_dict()}

        fit("raw_box", lambda: dimension.box_dimension(sp))
        if sp.mass is not None:
            centers = rng.choice(sp.n, size=min(50, sp.n), replace=False)
            fit("volume", lambda: dimension.volume_growth_exponent(sp, centers))
        levels = [st.log_pi[fg.level_vertices(n)] for n in range(fg.n_max + 1)]
        crit = dimension.critical_exponent(levels)
        out["critical"] = crit.to_dict()
        dimension.write_slope_table(crit, self.path("slopes.csv"))
        fit("deformed_box", lambda: dimension.deformed_dimension(self.boundary()))
        write_json(self.path("dims.json"), out)
        self.verify["dims"] = {k: v.get("estimate") for k, v in out.items()}
        self.manifest(["dims.json", "slopes.csv"])
        return out

    # orchestration --------------------------------------------------------------------
    def run(self, stages=None):
        stages = self.config.stages if stages is None else stages
        for s in STAGES:
            if s not in stages:
                continue
            try:
                getattr(self, f"stage_{s}")()
            except ConfdimError as e:
                raise StageError(f"stage {s} failed: {e}", witness={"stage": s, **e.to_dict()}) from e
        return self.verify


def verify_outputs(outdir):
    """Collect hard and soft checks from the reports in ``outdir``.

    Returns (report, status) with status 0 when every hard invariant holds, 2 when only
    soft diagnostics fail.
    """
    hard, soft = {}, {}
    p = lambda n: os.path.join(outdir, n)  # noqa: E731
    if os.path.exists(p("filling.json")):
        f = read_json(p("filling.json"))
        soft["path_condition"] = bool(f["path_condition"]["passed"])
    if os.path.exists(p("weights.json")):
        w = read_json(p("weights.json"))
        hard["h1"] = w["axioms"]["h1_violations"] == 0
        hard["h2"] = w["axioms"]["h2_violations"] == 0
        hard["regularization"] = w["regularization"]["violations"] == 0
        mm = w["min_margin"]
        hard["admissible"] = (mm == "inf") or float(mm) >= 1 - 1e-12
        hard["parents_within_radius"] = bool(w["parents"]["within_radius"]) and w["parents"]["non_adjacent"] == 0
        hard["pi_ceiling"] = w["pi_ceiling_violations"] == 0
        if "violations" in w["varpi"]:
            hard["pi_below_varpi"] = w["varpi"]["violations"] == 0
        h3 = w["axioms"].get("h3_min_ratio")
        soft["h3_positive"] = h3 is None or (isinstance(h3, float) and h3 > 0)
    if os.path.exists(p("deform.json")):
        d = read_json(p("deform.json"))
        hard["lower_le_upper"] = bool(d["lower_le_upper"])
        for m in weights.METHODS:
            hard[f"{m}_is_symmetric"] = d[m]["symmetric"] and d[m]["zero_diagonal"]
    if os.path.exists(p("dims.json")):
        dd = read_json(p("dims.json"))
        for k, v in dd.items():
            soft[f"{k}_fit"] = "error" not in v
    report = {"hard": hard, "soft": soft, "hard_ok": all(hard.values()), "soft_ok": all(soft.values())}
    status = 0 if report["hard_ok"] and report["soft_ok"] else (2 if report["hard_ok"] else 1)
    write_json(p("verify.json"), report)
    return report, status


# checks outside the pipeline --------------------------------------------------------------


MODULUS_FIXTURES = [(1.0, 2.0, 40), (1.0, 4.0, 40), (1.0, 10.0, 40), (1.0, float(np.exp(np.pi / 2)), 40),
                    (1.0, float(np.exp(2 * np.pi)), 20)]


def modulus_check(fixtures=MODULUS_FIXTURES, rel_tol=0.05):
    """Graded round annuli: modulus against log(ratio)/2pi, and the radius-ratio sandwich."""
    rows = []
    for r_in, r_out, cells in fixtures:
        dom = planar.round_annulus(r_in, r_out, cells=cells, graded=True)
        rep = planar.grid_modulus(dom)
        exact = float(np.log(r_out / r_in) / (2 * np.pi))
        R1, R2 = dom.radii()
        lo, hi = planar.teichmuller_bounds(rep.m)
        rel = abs(rep.m - exact) / exact
        ratio = R2 / R1
        rows.append({"r_in": r_in, "r_out": r_out, "cells": cells, **rep.to_dict(), "exact": exact,
                     "rel_error": rel, "measured_ratio": ratio, "lower": lo, "upper": hi,
                     "modulus_ok": bool(rel <= rel_tol), "sandwich_ok": bool(lo <= ratio <= hi * 1.05)})
    return rows


def csbp_check(n_paths=100_000, n_bridges=10_000, seed=0, workers=1, dt=1e-3):
    from . import csbp

    ss = np.random.SeedSequence(seed).generate_state(4)
    rows = [dict(r, check="laplace") for r in csbp.laplace_check(n_paths=n_paths, dt=dt, seed=int(ss[0]),
                                                                workers=workers)]
    rows.append(dict(csbp.lifetime_check(n_paths=n_paths, dt=dt, seed=int(ss[1]), workers=workers),
                     check="lifetime"))
    if n_bridges > 0:
        for (t, A), s in zip([(0.5, 6.0), (0.9, 4.0)], ss[2:]):
            rows.append(dict(csbp.bridge_check(1.0, 1.0, t, A, n_bridges=n_bridges, seed=int(s), workers=workers),
                             check="bridge"))
    return rows
