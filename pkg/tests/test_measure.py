import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warplab.errors import ConfigurationError, SeminormDivergence, SingularPointError
from warplab.measure import (
    ConvergenceTable,
    convergence_table,
    divergence_scan,
    gradient_distance,
    integrate,
    log_profile_integral,
    lq_metric_distance,
    monte_carlo_volume,
    volume,
    w1p_seminorm,
)
from warplab.sphere import RefinementPoint, build_grid, configuration_from_dict, equator_configuration, poles_case1
from warplab.warp import ConstantWarp, RadialTerm, WarpField

LOG_PART = 8 * math.pi - 4 * math.pi * math.log(4.0)


def single_pole(b=2.0, point=(0.9, 0.4)):
    return configuration_from_dict({
        "case": "custom", "points": [list(point)], "weight_rule": {"kind": "explicit", "values": [1.0]},
        "offset_rule": {"kind": "explicit", "values": [b]}, "Kbar": max(2.0, b),
    })


def limit_and_grid(cfg, resolution=32, depth=12):
    return WarpField(cfg), build_grid(resolution, cfg, depth, [math.inf])


# --- integrals ---------------------------------------------------------------------


def test_log_profile_closed_form():
    assert log_profile_integral() == pytest.approx(LOG_PART, rel=1e-14)
    half = log_profile_integral(0.0, math.pi / 2)
    assert 2 * half == pytest.approx(LOG_PART, rel=1e-14)


def test_log_profile_matches_quadrature():
    from scipy.integrate import quad

    val, _ = quad(lambda r: -2 * math.sin(r) * math.log(math.sin(r)), 0.3, 2.0)
    assert log_profile_integral(0.3, 2.0) == pytest.approx(2 * math.pi * val, rel=1e-12)


def test_integrate_constant(unit_grid):
    assert integrate(np.ones(unit_grid.size), unit_grid) == pytest.approx(4 * math.pi, rel=1e-14)
    assert integrate(lambda X: np.ones(len(X)), unit_grid) == pytest.approx(4 * math.pi, rel=1e-14)


def test_integrate_rejects_singular_values(unit_grid):
    vals = np.ones(unit_grid.size)
    vals[3] = np.inf
    with pytest.raises(SingularPointError):
        integrate(vals, unit_grid)
    with pytest.raises(ValueError):
        integrate(np.ones(5), unit_grid)


@pytest.mark.parametrize("b", [2.0, 3.0, 5.0])
def test_single_pole_limit_integral(b):
    f, g = limit_and_grid(single_pole(b))
    expected = LOG_PART + 4 * math.pi * b
    assert volume(f, g) / (2 * math.pi) == pytest.approx(expected, rel=1e-10)


def test_smoothed_integral_squeezed():
    pole = single_pole().pole(1)
    term = RadialTerm(0.1, 2.0, pole)
    v = pole.vector
    g = build_grid(32, points=[RefinementPoint(tuple(v), math.sqrt(0.1)),
                               RefinementPoint(tuple(-v), math.sqrt(0.1))], depth_limit=8)
    val = integrate(term.value, g)
    assert 8 * math.pi < val < LOG_PART + 8 * math.pi


def test_constant_volume(unit_grid):
    assert volume(ConstantWarp(1.7), unit_grid) == pytest.approx(8 * math.pi**2 * 1.7, rel=1e-14)


def test_integral_bound_per_level(configs, level_grids):
    for (name, j), g in level_grids.items():
        cfg = configs[name]
        assert integrate(WarpField(cfg, j).value, g) <= cfg.K * cfg.T


def test_monte_carlo_oracle():
    cfg = equator_configuration()
    f = WarpField(cfg, 2)
    g = build_grid(64, cfg, 12, [2])
    est, se = monte_carlo_volume(f, n=10**7, seed=3)
    assert abs(volume(f, g) - est) <= 3 * se


# --- metric distances ----------------------------------------------------------------


def test_lq_distance_to_itself_is_zero():
    f, g = limit_and_grid(poles_case1(), 16, 6)
    assert lq_metric_distance(f, f, 1.0, g) == 0.0


def test_lq_single_pole_decreasing():
    cfg = single_pole()
    finf, g = limit_and_grid(cfg, 32, 10)
    g = build_grid(32, cfg, 10, list(range(1, 21)) + [math.inf])
    vals = [lq_metric_distance(WarpField(cfg, j), finf, 1.0, g) for j in range(1, 21)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_lq_triangle_inequality():
    cfg = poles_case1()
    g = build_grid(24, cfg, 8, [1, 2, 5, 9])
    for q in (1.0, 1.5, 3.0):
        a, b, c = (WarpField(cfg, j) for j in (1, 5, 9))
        assert lq_metric_distance(a, c, q, g) <= lq_metric_distance(a, b, q, g) + lq_metric_distance(b, c, q, g) + 1e-9


def test_exponent_below_one_rejected(unit_grid):
    c = ConstantWarp(1.0)
    for fn in (lambda: lq_metric_distance(c, c, 0.5, unit_grid), lambda: w1p_seminorm(c, 0.5, unit_grid),
               lambda: gradient_distance(c, c, 0.9, unit_grid)):
        with pytest.raises(ConfigurationError):
            fn()


# --- Sobolev seminorms -----------------------------------------------------------------


def test_constant_seminorm_zero(unit_grid):
    assert w1p_seminorm(ConstantWarp(2.0), 1.5, unit_grid) == 0.0


def test_single_pole_w11_closed_form():
    f, g = limit_and_grid(single_pole(point=(0.0, 0.0)))
    assert w1p_seminorm(f, 1.0, g) == pytest.approx(8 * math.pi, rel=1e-9)
    # off the grid axis the kink of |cot| along the pole's equator limits accuracy
    f, g = limit_and_grid(single_pole())
    assert w1p_seminorm(f, 1.0, g) == pytest.approx(8 * math.pi, rel=1e-4)


@pytest.mark.parametrize("p", [1.0, 1.5, 1.9])
def test_seminorm_stable_under_refinement(p):
    f, g = limit_and_grid(single_pole())
    a, b = w1p_seminorm(f, p, g.with_depth(6)), w1p_seminorm(f, p, g.with_depth(12))
    assert abs(a - b) <= 0.01 * b


def test_normalized_seminorm_nondecreasing_in_p():
    cfg = configuration_from_dict({"case": "custom", "points": [[0.5, 0.0], [2.0, 2.5]],
                                   "weight_rule": {"kind": "explicit", "values": [0.7, 0.3]}})
    f, g = limit_and_grid(cfg, 24, 10)
    vals = [w1p_seminorm(f, p, g, normalized=True) for p in (1.0, 1.5, 1.9)]
    assert vals[0] <= vals[1] <= vals[2]


def test_p2_divergence_reported():
    f, g = limit_and_grid(single_pole())
    with pytest.raises(SeminormDivergence) as err:
        w1p_seminorm(f, 2.0, g)
    values = [v for _, v in err.value.table]
    assert all(b > a for a, b in zip(values, values[1:]))
    with pytest.raises(SeminormDivergence):
        gradient_distance(WarpField(single_pole(), 4), f, 2.0, g)


def test_gradient_distance_to_itself_zero():
    f, g = limit_and_grid(poles_case1(), 16, 6)
    assert gradient_distance(f, f, 1.0, g) == 0.0
    assert gradient_distance(f, f, 2.0, g) == 0.0


def test_divergence_scan_single_pole():
    f = WarpField(single_pole())
    scan = divergence_scan(f)
    # a unit term is singular at its pole and at the antipode
    assert scan["rate_per_unit"] == pytest.approx(8 * math.pi, rel=0.01)
    assert np.allclose(scan["increments"][-4:], 2 * 8 * math.pi * math.log(2), rtol=1e-3)
    p1 = np.array(scan["p=1"])
    assert np.all(np.diff(p1) > 0) and p1[-1] < 8 * math.pi + 1e-6


def test_divergence_scan_additive():
    one = divergence_scan(WarpField(single_pole()))
    two_cfg = configuration_from_dict({
        "case": "custom", "points": [[0.9, 0.4], [2.0, 2.5]],
        "weight_rule": {"kind": "explicit", "values": [1.0, 1.0]}, "K": 2.0,
    })
    two = divergence_scan(WarpField(two_cfg))
    assert two["slope"] == pytest.approx(2 * one["slope"], rel=1e-3)
    assert two["rate_per_unit"] == pytest.approx(8 * math.pi, rel=0.01)


@pytest.mark.parametrize("eps", [[0.01, 0.02], [0.2, 0.1]])
def test_divergence_scan_bad_eps(eps):
    with pytest.raises(ConfigurationError):
        divergence_scan(WarpField(single_pole()), eps_list=eps)


def test_divergence_scan_needs_singular_field():
    with pytest.raises(ConfigurationError):
        divergence_scan(ConstantWarp(1.0))


# --- convergence tables ----------------------------------------------------------------


def test_convergence_table_single_pole(tmp_path):
    cfg = single_pole()
    table = convergence_table(cfg, [1, 2, 4, 8], q_list=(1.0, 2.0), p_list=(1.0, 1.5), resolution=24, depth_limit=8)
    assert all(table.flags().values())
    assert set(table.flags()) == {"Lq1", "Lq2", "W1p1", "W1p1.5"}
    path = tmp_path / "conv.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "level,kind,exponent,value,tail_bound" and len(lines) == 17


def test_convergence_table_errors():
    with pytest.raises(ConfigurationError):
        convergence_table(equator_configuration(), [1, 2])
    with pytest.raises(ConfigurationError):
        convergence_table(poles_case1(), [2, 1])
    with pytest.raises(ValueError):
        ConvergenceTable().add(1, "Lq", 1.0, -1.0, 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 4.0))
def test_lq_distance_nonnegative(q):
    cfg = poles_case1()
    g = build_grid(16, cfg, 6, [1, 3])
    assert lq_metric_distance(WarpField(cfg, 1), WarpField(cfg, 3), q, g) > 0
