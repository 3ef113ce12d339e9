"""The 3/2-stable continuous-state branching process with mechanism c*u^{3/2}, c = sqrt(8/3).

Closed forms for the Laplace functional and lifetime, an Euler-Lamperti simulator, bridges
by rejection on the lifetime, the bridge tail bound and scale-counting diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np
from concurrent.futures import ThreadPoolExecutor

from . import kernels
from .errors import (
    InvalidParameter,
    NonpositiveInput,
    NonpositiveLambda,
    NotDecreasing,
    ParameterOutOfRange,
    RejectionBudgetExceeded,
)

MECHANISM = np.sqrt(8.0 / 3.0)
# A standard totally skewed 3/2-stable draw X has E exp(-s X) = exp(sqrt(2) s^{3/2});
# multiplying by (4/3)^{1/3} turns the exponent into MECHANISM * s^{3/2}.
STABLE_SCALE = (4.0 / 3.0) ** (1.0 / 3.0)
BATCH = 8192


def psi(u):
    return MECHANISM * np.asarray(u, dtype=np.float64) ** 1.5


def laplace_u(t, lam):
    """u_t(lam) solving du/dt = -psi(u), u_0 = lam. ``lam=inf`` gives the extinction limit."""
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise NonpositiveLambda("lambda must be positive")
    if np.any(t < 0):
        raise InvalidParameter("t must be nonnegative")
    with np.errstate(divide="ignore"):
        out = (lam**-0.5 + np.sqrt(2.0 / 3.0) * t) ** -2.0
    return out if out.ndim else float(out)


def lifetime_law(y, t):
    """(cdf, pdf) of the lifetime started from y."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(y <= 0) or np.any(t <= 0):
        raise NonpositiveInput("y and t must be positive")
    cdf = np.exp(-1.5 * y / t**2)
    pdf = 3.0 * y * t**-3.0 * cdf
    if cdf.ndim == 0:
        return float(cdf), float(pdf)
    return cdf, pdf


@dataclass
class CSBPPath:
    dt: float
    values: np.ndarray
    lifetime: float = np.inf

    @property
    def times(self):
        return np.arange(len(self.values)) * self.dt


@dataclass
class CSBPBatch:
    """Many paths recorded at ``record_steps``; ``lifetime`` is inf for paths alive at the end."""

    dt: float
    record_steps: np.ndarray
    values: np.ndarray
    lifetime: np.ndarray = field(repr=False)


def _batch_seeds(seed, n_paths):
    nb = -(-n_paths // BATCH)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(nb), [min(BATCH, n_paths - i * BATCH) for i in range(nb)]


def _run_batch(ss, m, y0, dt, n_steps, record_steps):
    rng = np.random.default_rng(ss)
    y = np.full(m, float(y0)) if np.ndim(y0) == 0 else np.array(y0, dtype=np.float64)
    rec = np.zeros((m, len(record_steps)))
    life = np.full(m, np.inf)
    slot = {int(s): k for k, s in enumerate(record_steps)}
    if 0 in slot:
        rec[:, slot[0]] = y
    alive = np.arange(m)
    ya = y.copy()
    for step in range(1, n_steps + 1):
        if alive.size:
            v = rng.uniform(-np.pi / 2, np.pi / 2, alive.size)
            w = rng.exponential(size=alive.size)
            kernels.csbp_step(ya, v, w, dt, STABLE_SCALE)
            dead = ya <= 0
            if dead.any():
                life[alive[dead]] = step * dt
                alive = alive[~dead]
                ya = ya[~dead]
        k = slot.get(step)
        if k is not None:
            rec[alive, k] = ya
    return rec, life


def simulate_csbp(y, dt, n_steps, n_paths, seed=None, record_steps=None, workers=1):
    """Euler-Lamperti simulation: Y <- Y + (Y dt)^{2/3} S with S a stable draw, absorbed at 0.

    Paths are simulated in fixed batches with seeds spawned from ``seed``, so results do not
    depend on ``workers``.
    """
    if np.any(np.asarray(y) <= 0):
        raise NonpositiveInput("initial value must be positive")
    if not 0 < dt <= 1e-2:
        raise InvalidParameter("dt must lie in (0, 1e-2]")
    record_steps = np.arange(n_steps + 1) if record_steps is None else np.asarray(record_steps, dtype=np.int64)
    seeds, sizes = _batch_seeds(seed, n_paths)
    jobs = [(ss, m, y, dt, n_steps, record_steps) for ss, m in zip(seeds, sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _run_batch(*a), jobs))
    else:
        parts = [_run_batch(*a) for a in jobs]
    return CSBPBatch(
        dt, record_steps,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
    )


def sample_csbp(y, dt=1e-3, t_max=1.0, seed=None):
    """A single path on the grid k*dt, k <= t_max/dt."""
    n_steps = int(round(t_max / dt))
    b = simulate_csbp(y, dt, n_steps, 1, seed)
    return CSBPPath(dt, b.values[0], float(b.lifetime[0]))


def bridge_tail_bound(y, T, t, A):
    """Raw (unclamped) tail bound for the bridge of lifetime T at time t."""
    if not (y > 0 and T > 0 and 0 < t < T and A > 0):
        raise ParameterOutOfRange("need y > 0, 0 < t < T and A > 0")
    return float(3**1.5 * np.exp(-A + 3 * (np.sqrt(3) - 1) * y * (T - t) / T**3))


def sample_bridges(y, T, tol=None, dt=1e-3, n_bridges=1, seed=None, max_attempts=None,
                   record_times=None, workers=1):
    """Rejection sampling of paths whose lifetime falls in [T, T+tol].

    Returns a CSBPBatch of accepted paths recorded at ``record_times`` (default: full grid).
    """
    tol = T / 100 if tol is None else tol
    if tol <= 0 or T <= 0:
        raise InvalidParameter("T and tol must be positive")
    n_steps = int(np.ceil((T + tol) / dt - 1e-9))
    if record_times is None:
        rec = np.arange(n_steps + 1)
    else:
        rec = np.rint(np.asarray(record_times) / dt).astype(np.int64)
    p_acc = lifetime_law(y, T + tol)[0] - lifetime_law(y, T)[0]
    chunk = int(min(max(4 * n_bridges / max(p_acc, 1e-6), BATCH), 1 << 18))
    if max_attempts is None:
        max_attempts = int(50 * n_bridges / max(p_acc, 1e-9)) + BATCH
    ss = np.random.SeedSequence(seed)
    vals, lives, attempts = [], [], 0
    accepted = 0
    while accepted < n_bridges:
        if attempts >= max_attempts:
            raise RejectionBudgetExceeded(
                f"accepted {accepted}/{n_bridges} bridges after {attempts} attempts",
                witness={"accepted": accepted, "attempts": attempts},
            )
        m = int(min(chunk, max_attempts - attempts))
        b = simulate_csbp(y, dt, n_steps, m, ss.spawn(1)[0], rec, workers)
        attempts += m
        ok = (b.lifetime >= T - 1e-12) & (b.lifetime <= T + tol + 1e-12)
        vals.append(b.values[ok])
        lives.append(b.lifetime[ok])
        accepted += int(ok.sum())
    v = np.concatenate(vals)[:n_bridges]
    life = np.concatenate(lives)[:n_bridges]
    out = CSBPBatch(dt, rec, v, life)
    out.attempts = attempts
    return out


def sample_csbp_bridge(y, T, tol=None, dt=1e-3, seed=None, max_attempts=None):
    b = sample_bridges(y, T, tol, dt, 1, seed, max_attempts)
    return CSBPPath(dt, b.values[0], float(b.lifetime[0]))


def count_good_scales(values, times, A):
    """Number of scales j with Y_{-t_j} <= A t_j^2."""
    values = np.asarray(values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if np.any(times <= 0) or np.any(np.diff(times) >= 0):
        raise NotDecreasing("scales must be positive and strictly decreasing")
    return int(np.sum(values <= A * times**2))


# Monte Carlo checks ---------------------------------------------------------------------


def se_verdict(diff, se, slack, min_paths_ok=True):
    """'pass' / 'fail' / 'inconclusive' (standard error too large to decide)."""
    if not min_paths_ok or se > slack:
        return "inconclusive"
    return "pass" if diff <= 4 * se + slack else "fail"


def laplace_check(y=1.0, times=(0.25, 0.5, 1.0), lams=(0.5, 1.0, 2.0), n_paths=100_000, dt=1e-3,
                  seed=0, workers=1):
    times = np.asarray(times, dtype=np.float64)
    steps = np.rint(times / dt).astype(np.int64)
    b = simulate_csbp(y, dt, int(steps.max()), n_paths, seed, steps, workers)
    rows = []
    for k, t in enumerate(times):
        for lam in lams:
            e = np.exp(-lam * b.values[:, k])
            est, se = float(e.mean()), float(e.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else np.inf
            exact = float(np.exp(-y * laplace_u(t, lam)))
            rows.append({
                "params": {"y": y, "t": float(t), "lambda": lam, "dt": dt, "n_paths": n_paths},
                "estimate": est, "se": se, "exact": exact,
                "verdict": se_verdict(abs(est - exact), se, 0.01),
            })
    return rows


def lifetime_check(y=1.5, t=1.0, n_paths=100_000, dt=1e-3, seed=1, workers=1, tol=0.01):
    b = simulate_csbp(y, dt, int(round(t / dt)), n_paths, seed, [0], workers)
    p = float(np.mean(b.lifetime <= t + 1e-12))
    exact = lifetime_law(y, t)[0]
    # the plug-in error vanishes when no path (or every path) dies; the error under the
    # exact probability says whether the budget can decide at all
    se = float(np.sqrt(max(p * (1 - p), exact * (1 - exact)) / n_paths))
    verdict = "inconclusive" if se > tol else ("pass" if abs(p - exact) <= tol else "fail")
    return {"params": {"y": y, "t": t, "dt": dt, "n_paths": n_paths}, "estimate": p, "se": se,
            "exact": exact, "verdict": verdict}


def bridge_check(y, T, t, A, n_bridges=10_000, dt=2e-3, tol=None, seed=2, workers=1):
    b = sample_bridges(y, T, tol, dt, n_bridges, seed, record_times=[t], workers=workers)
    hit = b.values[:, 0] > A * (T - t) ** 2
    p = float(hit.mean())
    se = float(np.sqrt(max(p * (1 - p), 1.0 / n_bridges) / n_bridges))
    bound = bridge_tail_bound(y, T, t, A)
    return {"params": {"y": y, "T": T, "t": t, "A": A, "dt": dt, "n_bridges": n_bridges,
                       "attempts": int(b.attempts)},
            "estimate": p, "se": se, "bound": bound,
            "verdict": "pass" if p <= bound + 4 * se else "fail"}


def hull_process_surrogate(x0, n_paths, dt=1e-3, seed=3, workers=1, max_time=None):
    """Time-reversed CSBP from a large start: row i, column k holds Y_{-k dt}.

    From the last time the hull process equals x0 it evolves as a CSBP from x0, so reading a
    CSBP path backwards from its extinction time imitates the hull process at radii below
    that time.
    """
    max_time = max_time or 6.0 * np.sqrt(x0)
    n_steps = int(round(max_time / dt))
    b = simulate_csbp(x0, dt, n_steps, n_paths, seed, None, workers)
    life_steps = np.rint(b.lifetime / dt)
    ok = np.isfinite(b.lifetime)
    rev = np.full((int(ok.sum()), n_steps + 1), np.nan)
    for r, (row, L) in enumerate(zip(b.values[ok], life_steps[ok].astype(np.int64))):
        rev[r, :L + 1] = row[:L + 1][::-1]
    return rev, b.lifetime[ok]


def good_scales_diagnostic(n=6, ratio=0.5, t1=0.5, A=2.0, b=0.5, x0=25.0, n_paths=4000, dt=1e-3,
                           seed=3, workers=1):
    """Fraction of surrogate hull paths with at least b*n good scales among t_j = t1 ratio^(j-1).

    Also reports the implied exponent alpha_hat = -log(1 - fraction)/n and the mean of
    Y_{-t}/t^2 at each scale (1 for the exact hull process).
    """
    rev, life = hull_process_surrogate(x0, n_paths, dt, seed, workers)
    tj = t1 * ratio ** np.arange(n)
    cols = np.rint(tj / dt).astype(np.int64)
    usable = life > tj[0]
    Y = rev[usable][:, cols]
    counts = np.array([count_good_scales(row, tj, A) for row in Y])
    frac = float(np.mean(counts >= b * n)) if len(counts) else float("nan")
    alpha_hat = float(-np.log1p(-frac) / n) if frac < 1 else float("inf")
    return {
        "params": {"n": n, "ratio": ratio, "t1": t1, "A": A, "b": b, "x0": x0, "dt": dt, "paths": int(len(Y))},
        "fraction": frac, "alpha_hat": alpha_hat,
        "normalized_means": [float(v) for v in (Y / tj**2).mean(axis=0)],
        "verdict": "pass" if np.isfinite(frac) and alpha_hat > 0 else "inconclusive",
    }


def sup_hull_diagnostic(s=0.1, t=0.3, eps_grid=(0.4, 0.2, 0.1, 0.05), x0=25.0, n_paths=4000, dt=1e-3,
                        seed=4, workers=1):
    """P[sup_{[s,t]} Y_{-r} < eps (t-s)^2] on the surrogate, with the slope of its log
    against eps^{-1/2} (negative when the probability decays as the statement predicts)."""
    rev, life = hull_process_surrogate(x0, n_paths, dt, seed, workers)
    i0, i1 = int(round(s / dt)), int(round(t / dt))
    usable = life > t
    sup = np.nanmax(rev[usable][:, i0:i1 + 1], axis=1)
    probs = [float(np.mean(sup < e * (t - s) ** 2)) for e in eps_grid]
    x = np.asarray(eps_grid) ** -0.5
    pos = np.asarray(probs) > 0
    slope = float(np.polyfit(x[pos], np.log(np.asarray(probs)[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return {"params": {"s": s, "t": t, "x0": x0, "dt": dt, "paths": int(usable.sum())},
            "eps": list(eps_grid), "probability": probs, "slope": slope,
            "verdict": "pass" if not np.isfinite(slope) or slope < 0 else "fail"}
