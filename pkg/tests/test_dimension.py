import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from confdim.dimension import (
    box_dimension,
    critical_exponent,
    deformed_dimension,
    level_log_sums,
    linear_fit,
    volume_growth_exponent,
    write_slope_table,
)
from confdim.errors import DegenerateRange, MissingMass, PoorFit, TooFewLevels
from confdim.metric import EuclideanSpace, FiniteMetricSpace
from confdim.weights import WeightState, boundary_metric, choose_parents, default_sigma, regularize_pi
from conftest import snake_filling


def _grid(m=100):
    X = np.stack(np.meshgrid(np.arange(m), np.arange(m)), -1).reshape(-1, 2) / (m - 1.0)
    return EuclideanSpace(X, mass=np.full(len(X), 1.0 / len(X)))


def test_linear_fit_exact_line():
    s, c, se, r2 = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert (s, c, r2) == pytest.approx((2, 1, 1)) and se == pytest.approx(0, abs=1e-12)


def test_box_unit_square():
    sp = _grid()
    h = 1 / 99
    rep = box_dimension(sp, 2 * h, sp.diam / 16)
    assert 1.85 <= rep.estimate <= 2.15
    assert 0 <= rep.r2 <= 1 and rep.range[0] < rep.range[1]


def test_box_segment_and_point():
    seg = EuclideanSpace(np.linspace(0, 1, 2000)[:, None])
    assert 0.9 <= box_dimension(seg).estimate <= 1.1
    pt = FiniteMetricSpace(np.zeros((1, 1)))
    assert box_dimension(pt).estimate == pytest.approx(0.0)


def test_box_errors():
    sp = _grid(30)
    with pytest.raises(DegenerateRange):
        box_dimension(sp, 0.5, 0.1)
    with pytest.raises(DegenerateRange):
        box_dimension(sp, 0.01, 0.5, n_radii=3)
    with pytest.raises(DegenerateRange):
        box_dimension(sp, 0.01, 5.0)
    rng = np.random.default_rng(0)
    clumped = EuclideanSpace(np.r_[rng.random((200, 1)) * 1e-3, np.linspace(0.3, 0.99, 6)[:, None]])
    with pytest.raises(PoorFit):
        box_dimension(clumped, 1e-5, 0.2)


def test_volume_growth_square_and_saturation():
    sp = _grid()
    rep = volume_growth_exponent(sp, center=np.arange(0, sp.n, 397))
    assert 1.8 <= rep.estimate <= 2.2
    radii = np.geomspace(0.02, 3.0, 12)
    rep = volume_growth_exponent(sp, center=5050, radii=radii)
    assert rep.extra["dropped"] > 0 and rep.range[1] <= np.hypot(0.5, 0.5) + 0.01
    with pytest.raises(MissingMass):
        volume_growth_exponent(EuclideanSpace(np.random.default_rng(0).random((20, 2))))


def test_critical_geometric_series():
    levels = [np.full(4**n, n * np.log(0.5)) for n in range(6)]
    rep = critical_exponent(levels)
    assert rep.estimate == pytest.approx(2.0, abs=1e-9)
    assert rep.extra["p_star_2se"] == pytest.approx(2.0, abs=1e-9)


def test_critical_clamped_weights_closed_form():
    eta, a = 0.01, 0.125
    # level sizes grow like a^(-4n/3), which keeps the synthetic levels small
    levels = [np.full(int(round(a ** (-4 * n / 3))), n * np.log(1 - eta)) for n in range(5)]
    expect = (4 / 3) * np.log(1 / a) / np.log(1 / (1 - eta))
    rep = critical_exponent(levels, np.linspace(0, 2000, 4001))
    assert rep.estimate == pytest.approx(expect, rel=1e-6)
    assert critical_exponent(levels).estimate == np.inf


def test_critical_errors_and_table(tmp_path):
    with pytest.raises(TooFewLevels):
        critical_exponent([np.zeros(1), np.zeros(2)])
    rep = critical_exponent([np.zeros(1), np.full(3, -1.0), np.full(9, -2.0)])
    path = tmp_path / "slopes.csv"
    write_slope_table(rep, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["p", "slope", "se"] and len(rows) == 242


def test_level_log_sums():
    lv = [np.log([0.5, 0.25])]
    assert level_log_sums(lv, 2.0)[0] == pytest.approx(np.log(0.25 + 0.0625))


def _random_levels(seed, n_levels):
    rng = np.random.default_rng(seed)
    levels = [np.zeros(1)]
    for n in range(1, n_levels):
        k = int(rng.integers(2, 4)) ** n
        levels.append(-rng.uniform(0.3, 1.0, k) * n)
    return levels


@given(st.integers(0, 10**6), st.integers(3, 6), st.floats(0.0, 0.5))
@settings(max_examples=60, deadline=None)
def test_critical_monotone_in_pi(seed, n_levels, bump):
    levels = _random_levels(seed, n_levels)
    rng = np.random.default_rng(seed + 1)
    bigger = [levels[0]] + [np.minimum(lv + bump * rng.random(len(lv)), 0.0) for lv in levels[1:]]
    grid = np.linspace(0, 30, 601)
    assert critical_exponent(bigger, grid).estimate >= critical_exponent(levels, grid).estimate - 1e-9


@given(st.integers(0, 10**6), st.integers(3, 6), st.floats(0.05, 1.0))
@settings(max_examples=60, deadline=None)
def test_critical_strictly_decreases_under_per_level_shrink(seed, n_levels, c):
    levels = _random_levels(seed, n_levels)
    grid = np.linspace(0, 30, 3001)
    base = critical_exponent(levels, grid).estimate
    assume(np.isfinite(base) and base > grid[1])
    shrunk = [lv - c * n for n, lv in enumerate(levels)]
    assert critical_exponent(shrunk, grid).estimate < base


def test_deformed_scale_invariance():
    D = _grid(40).distance_submatrix(np.arange(1600))
    a = deformed_dimension(D)
    b = deformed_dimension(7.3 * D)
    assert a.estimate == pytest.approx(b.estimate, abs=1e-9)


def _near_raw(seed):
    f = snake_filling(1500, seed, n_max=5)
    parent, _ = choose_parents(f)
    mu = np.full(f.n_vertices, f.alpha)
    lp, lpp, rho = regularize_pi(f, mu, parent, 0.01)
    state = WeightState(0.01, 0.1, mu=mu, parent=parent, log_pi=lp, log_pi_prime=lpp, rho=rho)
    return f, boundary_metric(f, state, 1.0)


@pytest.mark.parametrize("seed", [0, 2, 4])
def test_near_raw_deformation_tracks_raw(seed):
    # mu = alpha makes pi(u) = alpha^n, the scale of the raw metric on level n
    f, bm = _near_raw(seed)
    a = f.alpha
    lo, hi = a**3.5, a**0.5
    raw = box_dimension(FiniteMetricSpace(f.dist, validate=False), lo, hi, n_radii=4, check_fit=False)
    dfm = deformed_dimension(bm, lo, hi, n_radii=4, check_fit=False)
    assert abs(raw.estimate - dfm.estimate) <= 0.5


@pytest.mark.xfail(raises=DegenerateRange, strict=True,
                   reason="default weights are all clamped, so the deformed metric has no scaling window")
def test_deformed_not_above_raw_at_defaults():
    f = snake_filling(1500, 0, n_max=5)
    ws = default_sigma(f, strategy="metric_only")
    from confdim.weights import compute_nu_mu, repair_sigma

    sigma, _ = repair_sigma(f, ws.sigma)
    _, mu = compute_nu_mu(f, sigma, 0.01)
    parent, _ = choose_parents(f)
    lp, lpp, rho = regularize_pi(f, mu, parent, 0.01)
    state = WeightState(0.01, 0.1, mu=mu, parent=parent, log_pi=lp, log_pi_prime=lpp, rho=rho)
    raw = box_dimension(FiniteMetricSpace(f.dist, validate=False))
    assert deformed_dimension(boundary_metric(f, state, 1.0)).estimate <= raw.estimate
