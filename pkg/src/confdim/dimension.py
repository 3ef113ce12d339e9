"""Dimension estimators: box counting, volume growth, and the decay exponent of the level
sums of pi^p.

Box dimension is the computable stand-in for Hausdorff dimension; box dimension bounds
Hausdorff dimension from above, so deformed estimates are upper surrogates.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateRange, InvalidParameter, MissingMass, PoorFit, TooFewLevels
from .metric import FiniteMetricSpace

MIN_R2 = 0.8
TRIM = 0.15
GAP_NOTE = "box-counting estimate; it bounds the Hausdorff dimension from above"


@dataclass
class FitReport:
    estimate: float
    se: float
    r2: float
    n_points: int
    range: tuple
    note: str = ""
    table: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"estimate": _num(self.estimate), "se": _num(self.se), "r2": _num(self.r2),
                "n_points": self.n_points, "range": [_num(x) for x in self.range],
                "note": self.note, "table": self.table, **self.extra}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else str(x)


def linear_fit(x, y):
    """OLS of y on x: (slope, intercept, slope SE, r^2). Constant y gives r^2 = 1."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = len(x)
    if k < 2:
        raise DegenerateRange("a fit needs at least two points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise DegenerateRange("all abscissae coincide")
    slope = float(xc @ (y - y.mean())) / sxx
    icpt = float(y.mean() - slope * x.mean())
    res = y - (icpt + slope * x)
    sse = float(res @ res)
    syy = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if syy <= 1e-300 else max(0.0, 1.0 - sse / syy)
    se = float(np.sqrt(sse / (k - 2) / sxx)) if k > 2 else 0.0
    return slope, icpt, se, r2


def _require_r2(r2, what):
    if r2 < MIN_R2:
        raise PoorFit(f"{what}: r^2 = {r2:.3f} is below {MIN_R2}", witness={"r2": r2})


def _geometric(lo, hi, k):
    return np.exp(np.linspace(np.log(lo), np.log(hi), k))


def _trimmed(lo, hi, trim):
    a, b = np.log(lo), np.log(hi)
    w = b - a
    return float(np.exp(a + trim * w)), float(np.exp(b - trim * w))


def _auto_radii(space):
    """Median nearest-neighbour spacing to half the diameter."""
    if isinstance(space, FiniteMetricSpace):
        D = space.dist.copy()
        np.fill_diagonal(D, np.inf)
        lo = float(np.median(D.min(axis=1)))
    elif hasattr(space, "scale"):
        lo = float(space.scale)
    else:
        lo = float(np.median(space.tree.query(space.coords, k=2)[0][:, 1]))
    return lo, space.diam / 2


def _scan_order(space, seed):
    return np.random.default_rng(seed).permutation(space.n)


def box_dimension(space, r_min=None, r_max=None, n_radii=12, trim=None, check_fit=True, seed=0):
    """Least-squares slope of log N(r) against log(1/r), N the size of a greedy r-net
    scanned in a seeded random order.

    Without an explicit range, counts are taken on a fine grid from the median
    nearest-neighbour spacing to half the diameter; radii whose count exceeds n/8
    (discrete regime) or falls below 8 (saturated) are dropped, and 15% of the remaining
    log-range is trimmed at each end.
    """
    if n_radii < 4:
        raise DegenerateRange("need at least four radii")
    diam = space.diam
    if space.n <= 1 or diam == 0:
        return FitReport(0.0, 0.0, 1.0, n_radii, (0.0, 0.0), note="single point: flat counts")
    order = _scan_order(space, seed)
    if r_min is None and r_max is None:
        lo, hi = _auto_radii(space)
        radii = _geometric(lo, hi, max(3 * n_radii, 24))
        counts = np.array([len(space.net(float(r), order)) for r in radii], dtype=np.float64)
        keep = (counts <= space.n / 8) & (counts >= 8)
        if keep.sum() >= 4:
            radii, counts = radii[keep], counts[keep]
        trim = TRIM if trim is None else trim
        a, b = _trimmed(radii[0], radii[-1], trim) if radii[-1] > radii[0] else (radii[0], radii[-1])
        sel = (radii >= a * (1 - 1e-12)) & (radii <= b * (1 + 1e-12))
        radii, counts = radii[sel], counts[sel]
        if len(radii) < 4:
            raise DegenerateRange("scaling window holds fewer than four radii", witness={"kept": int(len(radii))})
    else:
        lo, hi = _auto_radii(space)
        r_min = lo if r_min is None else float(r_min)
        r_max = hi if r_max is None else float(r_max)
        if not 0 < r_min < r_max < diam:
            raise DegenerateRange(f"need 0 < r_min < r_max < diam, got {r_min}, {r_max}, {diam}",
                                  witness={"r_min": r_min, "r_max": r_max, "diam": diam})
        r_min, r_max = _trimmed(r_min, r_max, trim or 0.0)
        radii = _geometric(r_min, r_max, n_radii)
        counts = np.array([len(space.net(float(r), order)) for r in radii], dtype=np.float64)
    slope, _, se, r2 = linear_fit(-np.log(radii), np.log(counts))
    rep = FitReport(slope, se, r2, int(len(radii)), (float(radii[0]), float(radii[-1])), note=GAP_NOTE,
                    table=[{"r": float(r), "count": int(c)} for r, c in zip(radii, counts)])
    if check_fit:
        _require_r2(r2, "box dimension")
    return rep


def _mass_profile(space, center, radii):
    d = np.asarray(space.distances_from(int(center)), dtype=np.float64)
    order = np.sort(d)
    cm = np.cumsum(space.mass[np.argsort(d, kind="stable")])
    idx = np.searchsorted(order, radii, side="left")
    return np.where(idx > 0, cm[np.maximum(idx - 1, 0)], 0.0), float(d.max())


def volume_growth_exponent(space, center=None, radii=None, n_radii=12, check_fit=True):
    """Slope of log mass(B(c, r)) against log r, averaged over centres in log form.

    Radii at which some centre's ball already holds everything (r beyond its eccentricity)
    are dropped. Automatic radii keep the window where the mean ball holds between 8/n and
    1/8 of the mass, trimmed by 15% of its log-range at each end.
    """
    if space.mass is None:
        raise MissingMass("volume growth needs a mass")
    centers = np.atleast_1d(np.asarray(space.root if center is None else center, dtype=np.int64))
    if radii is None:
        lo, hi = _auto_radii(space)
        grid = _geometric(lo, hi, max(3 * n_radii, 24))
        frac = np.exp(np.mean([np.log(np.maximum(_mass_profile(space, c, grid)[0], 1e-300)) for c in centers],
                              axis=0)) / space.total_mass
        ok = (frac >= 8 / space.n) & (frac <= 0.125)
        if ok.sum() >= 4:
            grid = grid[ok]
        a, b = _trimmed(grid[0], grid[-1], TRIM)
        radii = grid[(grid >= a * (1 - 1e-12)) & (grid <= b * (1 + 1e-12))]
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0):
        raise DegenerateRange("radii must be positive")
    prof, ecc = [], []
    for c in centers:
        m, e = _mass_profile(space, c, radii)
        prof.append(m)
        ecc.append(e)
    prof = np.array(prof)
    keep = (radii <= min(ecc)) & np.all(prof > 0, axis=0) & np.all(prof < space.total_mass * (1 - 1e-12), axis=0)
    if keep.sum() < 3:
        raise DegenerateRange("fewer than three unsaturated radii", witness={"kept": int(keep.sum())})
    y = np.log(prof[:, keep]).mean(axis=0)
    slope, _, se, r2 = linear_fit(np.log(radii[keep]), y)
    rep = FitReport(slope, se, r2, int(keep.sum()), (float(radii[keep][0]), float(radii[keep][-1])),
                    table=[{"r": float(r), "log_mass": float(v)} for r, v in zip(radii[keep], y)],
                    extra={"centers": int(len(centers)), "dropped": int((~keep).sum())})
    if check_fit:
        _require_r2(r2, "volume growth")
    return rep


def level_log_sums(log_pi_levels, p):
    """log sum_{u in V_n} pi(u)^p for each level."""
    return np.array([logsumexp(p * np.asarray(lp, dtype=np.float64)) for lp in log_pi_levels])


def _log_sums_over_grid(lp, p, block=1 << 22):
    step = max(1, block // max(len(lp), 1))
    return np.concatenate([logsumexp(p[i:i + step, None] * lp[None, :], axis=1) for i in range(0, len(p), step)])


def _crossing(p, f):
    """First zero crossing of a decreasing sampled function (linear interpolation)."""
    neg = np.flatnonzero(f < 0)
    if neg.size == 0:
        return float("inf"), None
    i = int(neg[0])
    if i == 0:
        return float(p[0]), 0
    t = f[i - 1] / (f[i - 1] - f[i])
    return float(p[i - 1] + t * (p[i] - p[i - 1])), i


def critical_exponent(log_pi_levels, p_grid=None):
    """Exponent p* past which sum_{u in V_n} pi(u)^p decays in n.

    For each p the per-level log-sums are fitted against n by least squares through the
    origin (level 0 holds only the root with pi = 1). p* is where that slope turns
    negative; ``p_star_2se`` uses slope + 2 SE instead. Both interpolate linearly on the
    grid and are inf when no grid value decays.
    """
    levels = [np.asarray(lp, dtype=np.float64) for lp in log_pi_levels]
    if len(levels) < 3:
        raise TooFewLevels(f"need at least three levels, got {len(levels)}")
    p = np.linspace(0.0, 12.0, 241) if p_grid is None else np.asarray(p_grid, dtype=np.float64)
    if p.size < 2 or np.any(np.diff(p) <= 0):
        raise InvalidParameter("p_grid must be increasing with at least two values")
    n = np.arange(len(levels), dtype=np.float64)
    Y = np.stack([_log_sums_over_grid(lp, p) for lp in levels], axis=1)
    # least squares through the origin: the root level has sum exactly 1
    Y = Y[:, 1:] - Y[:, :1]
    m = n[1:]
    slopes = Y @ m / float(m @ m)
    res = Y - slopes[:, None] * m[None, :]
    ses = np.sqrt((res**2).sum(axis=1) / (len(m) - 1) / float(m @ m)) if len(m) > 1 else np.zeros(len(p))
    est, i = _crossing(p, slopes)
    conf, _ = _crossing(p, slopes + 2 * ses)
    if i is not None and i > 0:
        dslope = (slopes[i] - slopes[i - 1]) / (p[i] - p[i - 1])
        se_p = float(max(ses[i - 1], ses[i]) / abs(dslope)) if dslope != 0 else float("inf")
    else:
        se_p = float(ses[0]) if i == 0 else float("inf")
    r2 = None
    if np.isfinite(est):
        y = level_log_sums(levels, est)
        r2 = linear_fit(n[1:], y[1:])[3] if len(levels) > 2 else 1.0
    table = [{"p": float(a), "slope": float(b), "se": float(c)} for a, b, c in zip(p, slopes, ses)]
    return FitReport(est, se_p, r2, len(levels), (float(p[0]), float(p[-1])), table=table,
                     extra={"p_star_2se": _num(conf), "levels": len(levels)})


def deformed_dimension(metric, r_min=None, r_max=None, n_radii=12, check_fit=True):
    """Box dimension of a deformed boundary metric (a BoundaryMetric or a distance matrix)."""
    vals = metric.values if hasattr(metric, "values") else np.asarray(metric, dtype=np.float64)
    space = FiniteMetricSpace(vals, validate=False)
    return box_dimension(space, r_min, r_max, n_radii, check_fit=check_fit)


def write_slope_table(report, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "slope", "se"])
        for row in report.table:
            w.writerow([row["p"], row["slope"], row["se"]])
