import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leo_dmimo.constellation import (
    EARTH_RADIUS,
    MU_EARTH,
    SPEED_OF_LIGHT,
    Constellation,
    GeometryConfig,
    GroundUser,
    Orbit,
    Satellite,
    StaticConstellation,
    build_constellation,
    drop_users,
    elevation_angle,
    geodetic_to_cartesian,
    max_slant_range,
    propagate,
    service_time,
    service_times,
    take_snapshot,
    timing_offsets,
    uniform_random_shell,
    visible_set,
    walker_delta,
)

ALT = 600e3


def leapfrog(r, v, dt, steps):
    """Kick-drift-kick integration of the two-body problem."""
    x, y, z = r
    vx, vy, vz = v
    half = 0.5 * dt
    for _ in range(steps):
        d3 = (x * x + y * y + z * z) ** 1.5
        vx -= half * MU_EARTH * x / d3
        vy -= half * MU_EARTH * y / d3
        vz -= half * MU_EARTH * z / d3
        x += dt * vx
        y += dt * vy
        z += dt * vz
        d3 = (x * x + y * y + z * z) ** 1.5
        vx -= half * MU_EARTH * x / d3
        vy -= half * MU_EARTH * y / d3
        vz -= half * MU_EARTH * z / d3
    return np.array([x, y, z])


def test_equatorial_start():
    sat = Satellite(0, Orbit(ALT, 0.0, 0.0, 0.0))
    np.testing.assert_allclose(propagate(sat, 0.0), [EARTH_RADIUS + ALT, 0, 0], atol=1e-9)


def test_period_formula_and_periodicity():
    o = Orbit(ALT, 53.0, 40.0, 17.0)
    a = EARTH_RADIUS + ALT
    assert o.period == pytest.approx(2 * math.pi * math.sqrt(a ** 3 / MU_EARTH), rel=1e-14)
    sat = Satellite(0, o)
    for t in (0.0, 123.4, 5000.0):
        d = np.linalg.norm(propagate(sat, t) - propagate(sat, t + o.period))
        assert d < 1e-6


def test_quarter_period_against_integrator():
    o = Orbit(ALT, 53.0, 30.0, 0.0)
    sat = Satellite(0, o)
    r0 = propagate(sat, 0.0)
    # velocity by a central difference of the analytic orbit; speed is sqrt(mu/a)
    eps = 1e-3
    v0 = (propagate(sat, eps) - r0) / eps
    v0 *= math.sqrt(MU_EARTH / o.semi_major_axis) / np.linalg.norm(v0)
    v0 = v0 - r0 * np.dot(v0, r0) / np.dot(r0, r0)
    v0 *= math.sqrt(MU_EARTH / o.semi_major_axis) / np.linalg.norm(v0)
    T4 = o.period / 4
    steps = int(round(T4 / 1e-3))
    ref = leapfrog(r0, v0, T4 / steps, steps)
    got = propagate(sat, T4)
    assert np.linalg.norm(got - ref) < 50.0  # metres, over ~2400 km of arc
    cosang = np.dot(got, r0) / (np.linalg.norm(got) * np.linalg.norm(r0))
    assert math.degrees(math.acos(np.clip(cosang, -1, 1))) == pytest.approx(90.0, abs=1e-9)


def test_orbit_validation():
    with pytest.raises(ValueError):
        Orbit(-1.0, 53.0)
    with pytest.raises(ValueError):
        Orbit(ALT, 181.0)


def test_elevation_zenith_and_horizon():
    u = geodetic_to_cartesian(20.0, 30.0)
    up = u / np.linalg.norm(u)
    assert elevation_angle(u + 600e3 * up, u) == pytest.approx(90.0)
    tangent = np.cross(up, [0.0, 0.0, 1.0])
    tangent /= np.linalg.norm(tangent)
    assert elevation_angle(u + 1e6 * tangent, u) == pytest.approx(0.0, abs=1e-9)


def test_elevation_spherical_trig():
    user = geodetic_to_cartesian(0.0, 0.0)
    sat = geodetic_to_cartesian(0.0, 10.0, ALT)
    g = math.radians(10.0)
    ratio = EARTH_RADIUS / (EARTH_RADIUS + ALT)
    expected = math.degrees(math.atan((math.cos(g) - ratio) / math.sin(g)))
    assert float(elevation_angle(sat, user)) == pytest.approx(expected, abs=1e-9)


def test_elevation_coincident_raises():
    p = geodetic_to_cartesian(0, 0)
    with pytest.raises(ValueError):
        elevation_angle(p, p)


def test_visibility_scan_and_extremes():
    rng = np.random.default_rng(1)
    const = Constellation(uniform_random_shell(100, rng))
    users = drop_users(5, rng, 10.0, 20.0, 1e6)
    snap = take_snapshot(const, users, 0.0)
    vis = snap.visibility(0.0)
    for k, u in enumerate(users):
        scan = {int(const.ids[m]) for m in range(100)
                if elevation_angle(const.positions(0.0)[m], u.position) >= 0.0}
        assert vis[u.id] == scan
        assert visible_set(u, snap, 91.0) == frozenset()


def test_single_zenith_satellite_visible():
    sat = Satellite(7, Orbit(ALT, 0.0, 0.0, 0.0))
    user = GroundUser(0, 0.0, 0.0)
    snap = take_snapshot(Constellation([sat]), [user], 0.0)
    assert visible_set(user, snap, 0.0) == frozenset({7})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), lo=st.floats(0, 45), extra=st.floats(0, 40))
def test_visibility_monotone_and_range_bound(seed, lo, extra):
    rng = np.random.default_rng(seed)
    const = Constellation(uniform_random_shell(60, rng))
    users = drop_users(3, rng, 0.0, 0.0, 3e6)
    snap = take_snapshot(const, users, float(rng.uniform(0, 6000)))
    a, b = snap.visibility(lo), snap.visibility(lo + extra)
    rmax = max_slant_range(ALT, lo)
    for k, u in enumerate(users):
        assert b[u.id] <= a[u.id]
        for m in a[u.id]:
            assert snap.ranges[k, snap.sat_index(m)] <= rmax + 1e-6


def test_single_plane_snapshot_periodic():
    const = Constellation(walker_delta(10, 1, ALT, 53.0))
    T = const.satellites[0].orbit.period
    np.testing.assert_allclose(const.positions(321.0), const.positions(321.0 + T), atol=1e-6)


def test_walker_layout():
    sats = walker_delta(100, 10)
    assert len(sats) == 100 and len({s.orbit.raan for s in sats}) == 10
    with pytest.raises(ValueError):
        walker_delta(101, 10)
    const = build_constellation(GeometryConfig(num_satellites=400))
    assert len(const) == 400


def _overhead(phase=0.0):
    # equatorial orbit passing over a user at (0, 0) at t = 0
    return Satellite(0, Orbit(ALT, 0.0, 0.0, phase))


def test_service_time_fine_trace():
    sat = _overhead()
    user = GroundUser(0, 0.0, 0.0)
    z = service_time(user, sat, 0.0, 10.0)
    t = np.arange(0.0, 1500.0, 0.01)
    pos = Constellation([sat]).positions(t[:, None], np.array([0]))[:, 0]
    el = elevation_angle(pos, user.position)
    first = t[np.argmax(el < 10.0)]
    assert abs(z - first) < 0.1


def test_service_time_boundary_and_consistency():
    user = GroundUser(0, 0.0, 0.0)
    sat = _overhead()
    z = service_time(user, sat, 0.0, 5.0)
    # starting at the setting instant leaves ~nothing
    assert service_time(user, sat, z - 0.1, 5.0) < 0.2
    c = Constellation([sat])
    eps = 0.2
    assert elevation_angle(c.positions(z - eps), user.position)[0] >= 5.0
    assert elevation_angle(c.positions(z + eps), user.position)[0] < 5.0


def test_service_time_ordering_and_errors():
    user = GroundUser(0, 0.0, 0.0)
    zenith = _overhead(0.0)
    setting = Satellite(1, Orbit(ALT, 0.0, 0.0, 20.0))  # ahead of the user, moving away
    assert service_time(user, zenith, 0.0, 0.0) > service_time(user, setting, 0.0, 0.0)
    hidden = Satellite(2, Orbit(ALT, 0.0, 0.0, 180.0))
    with pytest.raises(ValueError):
        service_time(user, hidden, 0.0, 0.0)


def test_static_constellation_never_sets():
    const = StaticConstellation([_overhead()])
    assert service_times(const, geodetic_to_cartesian(0, 0), 0.0, 0.0)[0] == math.inf


def test_timing_offsets():
    assert timing_offsets({3: 7e5}, 3) == {3: 0.0}
    assert timing_offsets({1: SPEED_OF_LIGHT, 2: 0.0}, 2)[1] == pytest.approx(1.0)
    dt = timing_offsets({1: 1000e3, 2: 700e3}, 2)[1]
    assert dt == pytest.approx(300e3 / 299792458.0, rel=1e-15)
    with pytest.raises(KeyError):
        timing_offsets({1: 1.0}, 5)


def test_drop_users_inside_region():
    rng = np.random.default_rng(3)
    users = drop_users(500, rng, 45.0, 10.0, 50e3)
    c = geodetic_to_cartesian(45.0, 10.0)
    for u in users:
        ang = math.acos(np.clip(np.dot(u.position, c) / EARTH_RADIUS ** 2, -1, 1))
        assert ang * EARTH_RADIUS <= 50e3 + 1e-6


def test_geometry_config_validation():
    with pytest.raises(ValueError):
        GeometryConfig(min_elevation_deg=90.0)
    with pytest.raises(ValueError):
        GeometryConfig(num_satellites=0)
    with pytest.raises(ValueError):
        GeometryConfig(scheme="polar")
