import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warplab.errors import ConfigurationError
from warplab.metric_space import (
    PROBE_CENTER,
    ProductGrid,
    ball_volume,
    chart_at,
    check_distance_bound,
    diameter_bound,
    diameter_estimate,
    distance_bound,
    distance_field,
    probe_grid,
    scalar_probe,
    shortest_distance,
    stencil,
)
from warplab.sphere import equator_configuration, polar_to_vectors, poles_case1
from warplab.warp import ConstantWarp, WarpField

RADII = [0.1, 0.14, 0.18, 0.22, 0.26, 0.3]


@pytest.fixture(scope="module")
def flat_grid():
    """Constant warp 1 on the full product."""
    return ProductGrid(ConstantWarp(1.0), (24, 48, 48))


@pytest.fixture(scope="module")
def warped_grid():
    return ProductGrid(WarpField(equator_configuration(), 4), (16, 32, 32))


def test_stencil_is_symmetric_and_primitive():
    s = stencil(2)
    assert len(s) == 49
    keys = {tuple(v) for v in s}
    assert all(tuple(-np.asarray(v)) not in keys for v in s)
    assert all(math.gcd(*map(abs, v)) == 1 for v in s)


def test_full_grid_volume_matches_product(flat_grid):
    assert flat_grid.total_volume == pytest.approx(8 * math.pi**2, rel=1e-2)


def test_grid_volume_matches_quadrature(warped_grid):
    from warplab.measure import volume
    from warplab.sphere import build_grid

    cfg = equator_configuration()
    exact = volume(WarpField(cfg, 4), build_grid(32, cfg, 12, [4]))
    assert warped_grid.total_volume == pytest.approx(exact, rel=1e-2)


def test_distance_identity_and_symmetry(warped_grid, rng):
    assert shortest_distance(warped_grid, 7, 7) == 0.0
    nodes = rng.integers(warped_grid.n_nodes, size=(10, 2))
    for a, b in nodes:
        assert abs(shortest_distance(warped_grid, int(a), int(b)) - shortest_distance(warped_grid, int(b), int(a))) <= 1e-9


def test_triangle_inequality(warped_grid, rng):
    a, b, c = (int(v) for v in rng.integers(warped_grid.n_nodes, size=3))
    da, db = distance_field(warped_grid, a).distances, distance_field(warped_grid, b).distances
    assert da[c] <= da[b] + db[c] + 1e-9
    assert np.all(da <= da[b] + db + 1e-9)


def test_lipschitz_invariant(warped_grid):
    for src in (0, 1234, warped_grid.n_nodes - 1):
        assert distance_field(warped_grid, src).max_lipschitz_violation(warped_grid) <= 1e-9


def test_fiber_distance_of_constant_warp():
    g = ProductGrid(ConstantWarp(2.0), (8, 16, 64))
    p, q = (g.r[3], 0.0, 0.0), (g.r[3], 0.0, 16 * g.dp)
    assert shortest_distance(g, p, q) == pytest.approx(2.0 * 16 * g.dp, rel=1e-9)


def test_pythagorean_product_geodesic(flat_grid):
    g = flat_grid
    p = (g.r[6], 0.0, 0.0)
    q = (g.r[14], 12 * g.dt, 10 * g.dp)
    a = polar_to_vectors(p[0], p[1])
    b = polar_to_vectors(q[0], q[1])
    d_sphere = math.acos(float(np.clip(a @ b, -1, 1)))
    exact = math.hypot(d_sphere, q[2])
    assert shortest_distance(g, p, q) == pytest.approx(exact, rel=0.02)


def test_distance_bound_examples(warped_grid):
    f = warped_grid.field
    assert distance_bound(f, (1.0, 2.0, 3.0), (1.0, 2.0, 3.0)) == 0.0
    rep = check_distance_bound(warped_grid, f, [(0, 0)])
    assert rep.passed and rep["distance_bound"].measured == 0.0


def test_distance_bound_random_pairs(warped_grid, rng):
    pairs = [tuple(int(v) for v in rng.integers(warped_grid.n_nodes, size=2)) for _ in range(40)]
    assert check_distance_bound(warped_grid, warped_grid.field, pairs).passed


def test_constant_diameter_between_sphere_and_product(flat_grid):
    d = diameter_estimate(flat_grid, n_sources=8)
    assert math.pi * 0.98 <= d <= math.pi * math.sqrt(2) + 3 * flat_grid.max_edge


def test_diameter_below_bound(warped_grid):
    cfg = equator_configuration()
    assert diameter_estimate(warped_grid, n_sources=4) <= diameter_bound(cfg)
    with pytest.raises(ConfigurationError):
        diameter_estimate(warped_grid, n_sources=0)


def test_ball_volume_limits(flat_grid):
    c = flat_grid.nearest_node((math.pi / 2, 0.0, 0.0))
    assert ball_volume(flat_grid, c, 0.0) == 0.0
    vols = [ball_volume(flat_grid, c, r) for r in (0.2, 0.4, 0.6)]
    assert vols[0] < vols[1] < vols[2]
    with pytest.raises(ConfigurationError):
        ball_volume(flat_grid, c, 1.0)
    with pytest.raises(ConfigurationError):
        ball_volume(flat_grid, c, -0.1)


def test_ball_volume_self_converges():
    f = WarpField(poles_case1(), 2)
    center = (2.0, math.pi)
    R = math.pi / 8
    coarse, fine = probe_grid(f, center, R, (21, 21, 21)), probe_grid(f, center, R, (41, 41, 41))
    vc = ball_volume(coarse, PROBE_CENTER, R)
    vf = ball_volume(fine, PROBE_CENTER, R)
    assert abs(vc - vf) <= 0.05 * vf


def test_small_ball_is_euclidean():
    g = probe_grid(ConstantWarp(1.0), (math.pi / 2, 0.0), 0.3, (41, 41, 41))
    v = ball_volume(g, PROBE_CENTER, 0.3)
    assert v == pytest.approx(4 * math.pi / 3 * 0.3**3, rel=0.05)


def test_probe_on_flat_metric_is_zero():
    h = math.pi / 2
    g = ProductGrid(ConstantWarp(1.0), (31, 31, 31), ((h - 0.37, h + 0.37), (-0.37, 0.37), (-0.37, 0.37)),
                    frozen=(math.pi / 2, 0.0), span=4, isotropic_span=True)
    res = scalar_probe(g, PROBE_CENTER, RADII)
    assert res.calibrated == pytest.approx(0.0, abs=1e-12)


def test_probe_constant_warp():
    g = probe_grid(ConstantWarp(1.0), (math.pi / 2, 0.0), 0.4, (41, 41, 41))
    res = scalar_probe(g, PROBE_CENTER, np.linspace(0.12, 0.4, 8))
    assert res.calibrated == pytest.approx(2.0, abs=0.3)
    assert len(res.volumes) == 8


def test_probe_needs_four_radii(flat_grid):
    with pytest.raises(ConfigurationError):
        scalar_probe(flat_grid, 0, [0.1, 0.2, 0.3])
    with pytest.raises(ConfigurationError):
        scalar_probe(flat_grid, 0, [0.1, 0.2, 0.3, 2.0])


def test_probe_grid_radius_guard():
    with pytest.raises(ConfigurationError):
        probe_grid(ConstantWarp(1.0), (1.0, 1.0), 2.0)


@settings(max_examples=25)
@given(st.floats(0.01, math.pi - 0.01), st.floats(0.0, 2 * math.pi))
def test_chart_maps_reference_to_center(r, t):
    Q = chart_at((r, t))
    assert np.allclose(Q @ polar_to_vectors(math.pi / 2, 0.0), polar_to_vectors(r, t), atol=1e-12)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("kw", [
    {"shape": (2, 8, 8)},
    {"shape": (8, 7, 8)},
    {"bounds": ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))},
    {"bounds": ((0.5, 1.0), (1.0, 0.0), (0.0, 1.0))},
])
def test_grid_argument_errors(kw):
    args = {"shape": (8, 8, 8)}
    args.update(kw)
    with pytest.raises(ConfigurationError):
        ProductGrid(ConstantWarp(1.0), **args)


def test_distance_csv(tmp_path):
    g = ProductGrid(ConstantWarp(1.0), (4, 8, 8))
    path = tmp_path / "d.csv"
    distance_field(g, 0).to_csv(g, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,theta,phi,distance" and len(lines) == g.n_nodes + 1
