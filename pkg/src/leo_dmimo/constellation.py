"""
Satellite and ground-user geometry.

Circular two-body orbits around a spherical, non-rotating Earth. All
positions are Earth-centred Cartesian coordinates in metres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

EARTH_RADIUS = 6371.0e3  # m
MU_EARTH = 3.986004418e14  # m^3/s^2
SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class Orbit:
    altitude: float  # m
    inclination: float  # deg
    raan: float = 0.0  # deg
    phase_angle: float = 0.0  # deg, argument of latitude at t = 0

    def __post_init__(self):
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")
        if not 0.0 <= self.inclination <= 180.0:
            raise ValueError("inclination must lie in [0, 180] degrees")

    @property
    def semi_major_axis(self) -> float:
        return EARTH_RADIUS + self.altitude

    @property
    def mean_motion(self) -> float:
        """Angular rate in rad/s."""
        return math.sqrt(MU_EARTH / self.semi_major_axis ** 3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class Antenna:
    aperture_radius_wavelengths: float = 10.0
    gain_dbi: float = 30.0

    def __post_init__(self):
        if self.aperture_radius_wavelengths <= 0:
            raise ValueError("aperture radius must be positive")


@dataclass(frozen=True)
class Satellite:
    id: int
    orbit: Orbit
    antenna: Antenna = field(default_factory=Antenna)


@dataclass(frozen=True)
class GroundUser:
    id: int
    lat: float  # deg
    lon: float  # deg
    alt: float = 0.0  # m
    antenna_gain_db: float = 0.0

    def __post_init__(self):
        if abs(self.lat) > 90.0:
            raise ValueError("latitude must lie in [-90, 90]")

    @property
    def position(self) -> np.ndarray:
        return geodetic_to_cartesian(self.lat, self.lon, self.alt)


@dataclass
class UserRegion:
    center_lat: float = 0.0
    center_lon: float = 0.0
    radius_m: float = 500.0e3

    def __post_init__(self):
        if abs(self.center_lat) > 90.0:
            raise ValueError("center_lat must lie in [-90, 90]")
        if self.radius_m < 0:
            raise ValueError("radius_m must be non-negative")


@dataclass
class GeometryConfig:
    altitude_m: float = 600.0e3
    inclination_deg: float = 53.0
    scheme: str = "walker_delta"
    num_satellites: int = 100
    num_planes: int | None = None  # default round(sqrt(M))
    phasing: int = 1
    min_elevation_deg: float = 0.0  # vicinity threshold of user-centric clusters
    beam_pointing: str = "nadir"  # or "region_center"
    num_users: int = 10
    user_region: UserRegion = field(default_factory=UserRegion)

    def __post_init__(self):
        if isinstance(self.user_region, dict):
            self.user_region = UserRegion(**self.user_region)
        if self.altitude_m <= 0:
            raise ValueError("altitude_m must be positive")
        if not 0.0 <= self.inclination_deg <= 180.0:
            raise ValueError("inclination_deg must lie in [0, 180]")
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.num_satellites < 1:
            raise ValueError("num_satellites must be >= 1")
        if not 0.0 <= self.min_elevation_deg < 90.0:
            raise ValueError("min_elevation_deg must lie in [0, 90)")
        if self.scheme not in ("walker_delta", "uniform_random_sphere"):
            raise ValueError(f"unknown constellation scheme {self.scheme!r}")
        if self.beam_pointing not in ("nadir", "region_center"):
            raise ValueError(f"unknown beam pointing {self.beam_pointing!r}")


def geodetic_to_cartesian(lat, lon, alt=0.0) -> np.ndarray:
    lat = np.radians(lat)
    lon = np.radians(lon)
    r = EARTH_RADIUS + np.asarray(alt, dtype=float)
    return np.stack(
        [r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)],
        axis=-1,
    )


def _orbit_position(a, inc, raan, u):
    """Position on a circular orbit given the argument of latitude ``u`` (rad)."""
    cu, su = np.cos(u), np.sin(u)
    cO, sO = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inc), np.sin(inc)
    x = a * (cu * cO - su * ci * sO)
    y = a * (cu * sO + su * ci * cO)
    z = a * (su * si)
    return np.stack([x, y, z], axis=-1)


def propagate(sat: Satellite, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be non-negative")
    o = sat.orbit
    u = math.radians(o.phase_angle) + o.mean_motion * t
    return _orbit_position(
        o.semi_major_axis, math.radians(o.inclination), math.radians(o.raan), u
    )


class Constellation:
    """A fixed set of satellites with vectorised propagation."""

    def __init__(self, satellites: Sequence[Satellite]):
        if not satellites:
            raise ValueError("constellation needs at least one satellite")
        self.satellites = list(satellites)
        self.ids = np.array([s.id for s in self.satellites])
        self._a = np.array([s.orbit.semi_major_axis for s in self.satellites])
        self._inc = np.radians([s.orbit.inclination for s in self.satellites])
        self._raan = np.radians([s.orbit.raan for s in self.satellites])
        self._u0 = np.radians([s.orbit.phase_angle for s in self.satellites])
        self._n = np.array([s.orbit.mean_motion for s in self.satellites])
        self.aperture = np.array(
            [s.antenna.aperture_radius_wavelengths for s in self.satellites]
        )
        self.gain_dbi = np.array([s.antenna.gain_dbi for s in self.satellites])

    def __len__(self):
        return len(self.satellites)

    @property
    def max_period(self) -> float:
        return float(np.max(2.0 * np.pi / self._n))

    def positions(self, t, index=None) -> np.ndarray:
        """Positions at time(s) ``t``.

        A scalar ``t`` gives shape (M, 3). An array ``t`` broadcasts against
        the satellite axis, so ``t[:, None]`` gives (K, M, 3).
        """
        sl = slice(None) if index is None else index
        u = self._u0[sl] + self._n[sl] * np.asarray(t, dtype=float)
        return _orbit_position(self._a[sl], self._inc[sl], self._raan[sl], u)


class StaticConstellation(Constellation):
    """Satellites frozen at their t = 0 positions (zero relative motion)."""

    def positions(self, t, index=None):
        return super().positions(np.zeros_like(np.asarray(t, dtype=float)), index)

    @property
    def max_period(self) -> float:
        return math.inf


def walker_delta(
    num_satellites: int,
    num_planes: int | None = None,
    altitude: float = 600.0e3,
    inclination: float = 53.0,
    phasing: int = 1,
    antenna: Antenna | None = None,
) -> list[Satellite]:
    """Walker-delta i:T/P/F layout with RAANs spread over 360 degrees."""
    if num_planes is None:
        num_planes = max(1, round(math.sqrt(num_satellites)))
    if num_satellites % num_planes:
        raise ValueError(
            f"{num_satellites} satellites cannot be split evenly over {num_planes} planes"
        )
    per_plane = num_satellites // num_planes
    antenna = antenna or Antenna()
    sats = []
    for p in range(num_planes):
        for s in range(per_plane):
            phase = 360.0 * s / per_plane + 360.0 * phasing * p / num_satellites
            orbit = Orbit(altitude, inclination, 360.0 * p / num_planes, phase % 360.0)
            sats.append(Satellite(len(sats), orbit, antenna))
    return sats


def uniform_random_shell(
    num_satellites: int,
    rng: np.random.Generator,
    altitude: float = 600.0e3,
    antenna: Antenna | None = None,
) -> list[Satellite]:
    """Isotropic orbit normals with uniform phases; uniform on the shell at any t."""
    antenna = antenna or Antenna()
    inc = np.degrees(np.arccos(rng.uniform(-1.0, 1.0, num_satellites)))
    raan = rng.uniform(0.0, 360.0, num_satellites)
    phase = rng.uniform(0.0, 360.0, num_satellites)
    return [
        Satellite(i, Orbit(altitude, inc[i], raan[i], phase[i]), antenna)
        for i in range(num_satellites)
    ]


def build_constellation(cfg: GeometryConfig, rng=None, antenna=None) -> Constellation:
    if cfg.scheme == "walker_delta":
        sats = walker_delta(
            cfg.num_satellites, cfg.num_planes, cfg.altitude_m,
            cfg.inclination_deg, cfg.phasing, antenna,
        )
    else:
        if rng is None:
            raise ValueError("uniform_random_sphere needs an rng")
        sats = uniform_random_shell(cfg.num_satellites, rng, cfg.altitude_m, antenna)
    return Constellation(sats)


def elevation_angle(sat_pos, user_pos) -> np.ndarray:
    """Elevation (deg) of satellites above the local horizon of users.

    Broadcasts over leading axes; the last axis holds xyz.
    """
    sat_pos = np.asarray(sat_pos, dtype=float)
    user_pos = np.asarray(user_pos, dtype=float)
    los = sat_pos - user_pos
    dist = np.linalg.norm(los, axis=-1)
    if np.any(dist == 0):
        raise ValueError("satellite and user positions coincide")
    up = user_pos / np.linalg.norm(user_pos, axis=-1, keepdims=True)
    s = np.sum(los * up, axis=-1) / dist
    return np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))


def boresight_angle(sat_pos, user_pos, target=None) -> np.ndarray:
    """Angle (rad) between a satellite's beam axis and the direction to the user.

    The beam points at nadir, or at the ground point ``target`` when given.
    """
    sat_pos = np.asarray(sat_pos, dtype=float)
    user_pos = np.asarray(user_pos, dtype=float)
    to_user = user_pos - sat_pos
    axis = -sat_pos if target is None else np.asarray(target, dtype=float) - sat_pos
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    c = np.sum(to_user * axis, axis=-1) / np.linalg.norm(to_user, axis=-1)
    return np.arccos(np.clip(c, -1.0, 1.0))


def max_slant_range(altitude: float, min_elevation: float) -> float:
    """Slant range to a satellite seen exactly at ``min_elevation``."""
    a = EARTH_RADIUS + altitude
    e = math.radians(min_elevation)
    return math.sqrt(a ** 2 - (EARTH_RADIUS * math.cos(e)) ** 2) - EARTH_RADIUS * math.sin(e)


@dataclass(frozen=True)
class ConstellationSnapshot:
    time: float
    sat_ids: np.ndarray  # (M,)
    sat_positions: np.ndarray  # (M, 3)
    user_ids: np.ndarray  # (N,)
    user_positions: np.ndarray  # (N, 3)
    ranges: np.ndarray  # (N, M) m
    elevations: np.ndarray  # (N, M) deg
    boresight_angles: np.ndarray  # (N, M) rad

    def visibility(self, min_elevation: float) -> dict[int, frozenset[int]]:
        vis = self.elevations >= min_elevation
        return {
            int(u): frozenset(int(s) for s in self.sat_ids[vis[k]])
            for k, u in enumerate(self.user_ids)
        }

    def user_index(self, user_id: int) -> int:
        return int(np.flatnonzero(self.user_ids == user_id)[0])

    def sat_index(self, sat_id: int) -> int:
        return int(np.flatnonzero(self.sat_ids == sat_id)[0])

    def timing_offsets(self, user_id: int, members: Iterable[int], rsap_id: int):
        k = self.user_index(user_id)
        ranges = {m: float(self.ranges[k, self.sat_index(m)]) for m in members}
        return timing_offsets(ranges, rsap_id)


def take_snapshot(
    constellation: Constellation, users: Sequence[GroundUser], t: float, beam_target=None
) -> ConstellationSnapshot:
    sat_pos = constellation.positions(t)
    user_pos = np.array([u.position for u in users]).reshape(-1, 3)
    s = sat_pos[None, :, :]
    p = user_pos[:, None, :]
    return ConstellationSnapshot(
        time=float(t),
        sat_ids=constellation.ids,
        sat_positions=sat_pos,
        user_ids=np.array([u.id for u in users], dtype=int),
        user_positions=user_pos,
        ranges=np.linalg.norm(s - p, axis=-1),
        elevations=elevation_angle(s, p),
        boresight_angles=boresight_angle(s, p, beam_target),
    )


def visible_set(user: GroundUser, snapshot: ConstellationSnapshot, min_elevation: float):
    k = snapshot.user_index(user.id)
    return frozenset(int(s) for s in snapshot.sat_ids[snapshot.elevations[k] >= min_elevation])


def service_times(
    constellation: Constellation,
    user_pos,
    t0: float,
    min_elevation: float,
    sat_index=None,
    coarse_step: float = 10.0,
    tol: float = 0.05,
) -> np.ndarray:
    """Remaining visibility time (s) for each selected satellite.

    The elevation trace is sampled every ``coarse_step`` seconds up to one
    orbital period, then each first crossing below ``min_elevation`` is
    refined by bisection to ``tol``. Satellites that never set within the
    search window get ``inf``; satellites not visible at ``t0`` get ``nan``.
    """
    user_pos = np.asarray(user_pos, dtype=float)
    idx = np.arange(len(constellation)) if sat_index is None else np.asarray(sat_index)
    out = np.full(idx.shape, np.nan)
    if idx.size == 0:
        return out
    el0 = elevation_angle(constellation.positions(t0, idx), user_pos)
    vis = el0 >= min_elevation
    out[vis] = np.inf
    idx_v = idx[vis]
    if idx_v.size == 0:
        return out
    horizon = constellation.max_period
    if not math.isfinite(horizon):
        return out
    steps = np.arange(1, int(math.ceil(horizon / coarse_step)) + 1) * coarse_step
    pos = constellation.positions(t0 + steps[:, None], idx_v)  # (K, m, 3)
    below = elevation_angle(pos, user_pos) < min_elevation
    sets = below.any(axis=0)
    first = np.argmax(below, axis=0)
    lo = np.where(first > 0, steps[first - 1], 0.0)
    hi = steps[first]
    active = np.flatnonzero(sets)
    lo, hi = lo[active], hi[active]
    sub = idx_v[active]
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        el = elevation_angle(constellation.positions(t0 + mid, sub), user_pos)
        down = el < min_elevation
        hi = np.where(down, mid, hi)
        lo = np.where(down, lo, mid)
    res = np.full(idx_v.shape, np.inf)
    res[active] = hi
    out[vis] = res
    return out


def service_time(
    user: GroundUser,
    sat: Satellite,
    t0: float,
    min_elevation: float,
    coarse_step: float = 10.0,
    tol: float = 0.05,
) -> float:
    """Time until ``sat`` drops below ``min_elevation`` as seen by ``user``."""
    zeta = service_times(
        Constellation([sat]), user.position, t0, min_elevation,
        coarse_step=coarse_step, tol=tol,
    )[0]
    if np.isnan(zeta):
        raise ValueError(f"satellite {sat.id} is not visible to user {user.id} at t={t0}")
    return float(zeta)


def timing_offsets(cluster_ranges: Mapping[int, float], rsap_id: int) -> dict[int, float]:
    """Propagation delay of each member relative to the reference satellite."""
    if rsap_id not in cluster_ranges:
        raise KeyError(f"RSAP {rsap_id} is not a cluster member")
    r0 = cluster_ranges[rsap_id]
    return {m: (r - r0) / SPEED_OF_LIGHT for m, r in cluster_ranges.items()}


def drop_users(
    num_users: int,
    rng: np.random.Generator,
    center_lat: float = 0.0,
    center_lon: float = 0.0,
    radius: float = 500.0e3,
    antenna_gain_db: float = 0.0,
) -> list[GroundUser]:
    """Uniform drop over a spherical cap of surface radius ``radius``."""
    ang = radius / EARTH_RADIUS
    # uniform in area on the sphere: cos(d) uniform on [cos(ang), 1]
    d = np.arccos(1.0 - rng.uniform(0.0, 1.0, num_users) * (1.0 - math.cos(ang)))
    bearing = rng.uniform(0.0, 2.0 * math.pi, num_users)
    lat1, lon1 = math.radians(center_lat), math.radians(center_lon)
    lat2 = np.arcsin(
        math.sin(lat1) * np.cos(d) + math.cos(lat1) * np.sin(d) * np.cos(bearing)
    )
    lon2 = lon1 + np.arctan2(
        np.sin(bearing) * np.sin(d) * math.cos(lat1),
        np.cos(d) - math.sin(lat1) * np.sin(lat2),
    )
    lon2 = (np.degrees(lon2) + 180.0) % 360.0 - 180.0
    return [
        GroundUser(i, float(np.degrees(lat2[i])), float(lon2[i]), 0.0, antenna_gain_db)
        for i in range(num_users)
    ]
