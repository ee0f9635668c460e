import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsfp import domain_flow as dfl
from nsfp.errors import ConfigError, InvariantViolation
from nsfp.grid import Grid

ROT = dfl.VelocityFieldSpec("rigid_rotation", rate=0.7, support_radius=1.5, cutoff_width=0.3)


def circle(r, center=(0.0, 0.0)):
    def phi(x):
        return np.sqrt((x[0] - center[0]) ** 2 + (x[1] - center[1]) ** 2) - r
    return phi


def test_static_flow_map_is_identity():
    seeds = np.random.default_rng(0).uniform(-1, 1, (2, 20))
    out = dfl.advance_flow_map(dfl.VelocityFieldSpec("static"), 0.0, 3.0, seeds)
    assert np.array_equal(out, seeds)


def test_quarter_turn_rotation():
    seeds = np.random.default_rng(1).uniform(-0.8, 0.8, (2, 50))
    seeds = seeds[:, np.hypot(*seeds) < 1.1]
    t = math.pi / (2 * ROT.rate)
    out = dfl.advance_flow_map(ROT, 0.0, t, seeds, dt_geom=1e-3)
    exact = np.stack([-seeds[1], seeds[0]])
    assert np.max(np.abs(out - exact)) < 1e-8


def test_flow_map_composition():
    seeds = np.random.default_rng(2).uniform(-1.2, 1.2, (2, 30))
    direct = dfl.advance_flow_map(ROT, 0.0, 1.3, seeds)
    split = dfl.advance_flow_map(ROT, 0.5, 1.3, dfl.advance_flow_map(ROT, 0.0, 0.5, seeds))
    assert np.max(np.abs(direct - split)) < 1e-10
    back = dfl.advance_flow_map(ROT, 1.3, 0.0, direct)
    assert np.max(np.abs(back - seeds)) < 1e-10


def test_flow_map_preserves_polygon_area():
    s = np.linspace(0, 2 * math.pi, 2000, endpoint=False)
    seeds = np.stack([0.3 + 0.4 * np.cos(s), 0.1 + 0.4 * np.sin(s)])
    a0 = dfl.shoelace_area(seeds)
    out = dfl.advance_flow_map(ROT, 0.0, 2.0, seeds)
    assert abs(dfl.shoelace_area(out) - a0) / a0 < 1e-4


def test_level_set_at_zero_time_is_initial():
    g = Grid.box(2, 32, 1.0)
    phi0 = circle(0.5, (0.1, 0.0))
    phi = dfl.rebuild_level_set(ROT, 0.0, phi0, g, reinit=False)
    assert np.array_equal(phi, phi0(g.centers))


def test_rotating_disc_sign_agreement():
    g = Grid.box(2, 128, 1.6)
    c = np.array([0.45, 0.0])
    phi0 = circle(0.35, c)
    t = 1.1
    phi = dfl.rebuild_level_set(ROT, t, phi0, g, dt_geom=1e-3)
    a = ROT.rate * t
    rc = np.array([math.cos(a) * c[0] - math.sin(a) * c[1], math.sin(a) * c[0] + math.cos(a) * c[1]])
    x = g.centers
    inside = np.hypot(x[0] - rc[0], x[1] - rc[1]) < 0.35
    assert np.mean((phi < 0) == inside) >= 0.999


def test_pulsating_circle_radius():
    spec = dfl.VelocityFieldSpec("pulsation", amplitude=0.2, frequency=0.5, support_radius=1.4, cutoff_width=0.3)
    g = Grid.box(2, 96, 1.5)
    r0 = 0.5
    for t in (0.3, 0.5, 1.2):
        phi = dfl.rebuild_level_set(spec, t, circle(r0), g, dt_geom=1e-3)
        r_exact = r0 * math.exp(0.2 * math.sin(math.pi * t))
        x = g.centers
        # zero contour radius: |x| where phi changes sign along the +x axis row
        mid = g.shape[1] // 2
        row = phi[:, mid]
        xs = x[0][:, mid]
        i = np.flatnonzero((row[:-1] > 0) & (row[1:] <= 0))[0]
        r_num = -(xs[i] + (xs[i + 1] - xs[i]) * row[i] / (row[i] - row[i + 1]))
        assert abs(r_num - r_exact) < 1.5 * g.dx


def test_circle_perimeter_from_delta():
    for n in (64, 128):
        g = Grid.box(2, n, 1.0)
        r = 0.55
        geo = dfl.interface_geometry(circle(r)(g.centers), g)
        assert 0.95 * 2 * math.pi * r <= geo.perimeter(g) <= 1.05 * 2 * math.pi * r
        band = geo.band
        assert np.max(np.abs(np.sum(geo.normals[:, band] ** 2, axis=0) - 1)) < 1e-12


def test_half_space_normals_constant():
    g = Grid.box(2, 32, 1.0)
    phi = 0.6 * g.centers[0] + 0.8 * g.centers[1] + 0.013
    geo = dfl.interface_geometry(phi, g)
    assert np.any(geo.band)
    assert np.allclose(geo.normals[0][geo.band], 0.6, atol=1e-14)
    assert np.allclose(geo.normals[1][geo.band], 0.8, atol=1e-14)


def test_sphere_area_3d():
    g = Grid.box(3, 40, 1.0)
    r = 0.6
    x = g.centers
    phi = np.sqrt(np.sum(x**2, axis=0)) - r
    area = dfl.interface_geometry(phi, g).perimeter(g)
    assert abs(area - 4 * math.pi * r**2) <= 0.08 * 4 * math.pi * r**2


def test_volume_drift_rotation():
    g = Grid.box(2, 128, 1.6)
    phi0 = circle(0.4, (0.3, 0.1))
    v0 = dfl.fluid_volume(dfl.rebuild_level_set(ROT, 0.0, phi0, g), g)
    v1 = dfl.fluid_volume(dfl.rebuild_level_set(ROT, 1.0, phi0, g, dt_geom=1e-3), g)
    assert abs(v1 - v0) / v0 < 1e-3


def test_volume_floor_raises():
    g = Grid.box(2, 32, 1.0)
    with pytest.raises(InvariantViolation):
        dfl.build_geometry(ROT, 0.0, circle(0.2), g, M0=1.0)


def test_validate_rotation_clean():
    g = Grid.box(2, 64, 1.6)
    sets = [(t, dfl.rebuild_level_set(ROT, t, circle(0.5, (0.2, 0)), g)) for t in (0.0, 0.5)]
    rep = dfl.validate_velocity(ROT, g, sets)
    assert rep.max_div_tube < 1e-10
    assert rep.passed


def test_validate_pulsation_reports_divergence():
    spec = dfl.VelocityFieldSpec("pulsation", amplitude=0.1, frequency=1.0, support_radius=1.4, cutoff_width=0.3)
    g = Grid.box(2, 64, 1.6)
    sets = [(0.1, dfl.rebuild_level_set(spec, 0.1, circle(0.5), g))]
    rep = dfl.validate_velocity(spec, g, sets)
    # analytic divergence of the radial dilation inside the cutoff: 2 * A * 2 pi f cos(2 pi f t)
    expected = 2 * 0.1 * 2 * math.pi * math.cos(2 * math.pi * 0.1)
    assert rep.max_div_tube == pytest.approx(expected, rel=1e-12)
    assert any("divergence" in w for w in rep.warnings)


def test_validate_flags_support_outside_box():
    spec = dfl.VelocityFieldSpec("rigid_rotation", rate=1.0, support_radius=2.0, cutoff_width=0.3)
    g = Grid.box(2, 32, 1.5)
    rep = dfl.validate_velocity(spec, g, [(0.0, circle(0.5)(g.centers))])
    assert not rep.support_ok and not rep.passed


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4), st.floats(0.0, 3.0))
def test_velocity_vanishes_outside_support(x, y, t):
    pts = np.array([[x], [y]])
    v = ROT.velocity(t, pts)
    if math.hypot(x, y) >= ROT.support_radius:
        assert np.all(v == 0)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        dfl.VelocityFieldSpec("swirl")


def test_tabulated_round_trip(tmp_path):
    n = 9
    axes = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(axes, axes, indexing="ij")
    vals = np.stack([-Y, X], axis=-1)
    table = dfl.TabulatedField((n, n), (0.25, 0.25), (-1.0, -1.0), vals)
    path = tmp_path / "v.txt"
    table.write(path)
    back = dfl.TabulatedField.read(path)
    assert back.dims == (n, n) and np.array_equal(back.values, vals)
    spec = dfl.VelocityFieldSpec("tabulated", support_radius=0.9, cutoff_width=0.2, table=back)
    pts = np.array([[0.3], [0.2]])
    assert np.allclose(spec.velocity(0.0, pts)[:, 0], [-0.2, 0.3], atol=1e-12)
