"""
One Monte Carlo drop, from user placement to per-user SE.

All random draws of a drop come from a single generator in a fixed
order, so every policy and precoder mode evaluated on the same drop
sees the same channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .channel import RadioConfig
from .clustering import (
    ClusterEvent,
    ClusterPolicy,
    EventKind,
    RsapCriterion,
    ServingCluster,
    baseline_clusters,
    initial_access,
    serving_matrix,
    update_clusters,
)
from .constellation import (
    SPEED_OF_LIGHT,
    Constellation,
    GeometryConfig,
    GroundUser,
    boresight_angle,
    drop_users,
    elevation_angle,
    geodetic_to_cartesian,
    service_times,
    take_snapshot,
)
from .downlink import (
    PrecoderMode,
    SEReport,
    allocate_power,
    evaluate_sinr_se,
    make_precoder,
)
from .estimation import despread, estimate_covariance, lmmse_filter, receive_pilots
from .pilots import PilotBook

FC_MIN_ELEVATION = 0.0


@dataclass
class PolicyState:
    policy: ClusterPolicy
    criterion: RsapCriterion
    clusters: dict[int, ServingCluster]
    book: PilotBook
    events: list[ClusterEvent]
    a: np.ndarray  # (N, M') over the drop's link satellites
    theta: np.ndarray  # (N, M')

    def cluster_sizes(self, user_ids) -> list[int]:
        return [len(self.clusters[n].members) if n in self.clusters else 0 for n in user_ids]


@dataclass
class Drop:
    """Geometry and large-scale state of one drop.

    ``link_sats`` holds the satellites above the horizon of at least one
    user; links to satellites below a user's horizon are blocked (zero gain).
    """

    index: int
    time: float
    users: list[GroundUser]
    constellation: Constellation
    radio: RadioConfig
    uc_min_elevation: float
    beam_target: np.ndarray | None  # ground aim point of every beam; None = nadir
    shadow_db: np.ndarray  # (N, M) over the whole constellation
    aoa: np.ndarray  # (N, M)
    snapshot: object
    link_sats: np.ndarray  # satellite indices, (M',)
    beta: np.ndarray  # (N, M')
    rng: np.random.Generator
    _zeta_cache: dict = field(default_factory=dict)

    @property
    def user_ids(self) -> list[int]:
        return [u.id for u in self.users]

    def visibility(self, min_elevation: float):
        return self.snapshot.visibility(min_elevation)

    def beta_at(self, sat_index, t: float):
        """Large-scale gains (N, len(sat_index)) at time ``t``, shadowing held fixed."""
        sat_index = np.asarray(sat_index)
        pos = self.constellation.positions(t, sat_index)
        upos = self.snapshot.user_positions
        s, p = pos[None], upos[:, None]
        rng_m = np.linalg.norm(s - p, axis=-1)
        ls = ch.large_scale(
            rng_m, boresight_angle(s, p, self.beam_target), self.radio, shadow_db=self.shadow_db[:, sat_index]
        )
        beta = np.array(ls.beta, dtype=float)
        beta[elevation_angle(s, p) < 0.0] = 0.0
        return beta

    def score_fn(self, criterion: RsapCriterion, t: float | None = None, min_elevation=None):
        t = self.time if t is None else t
        min_el = self.uc_min_elevation if min_elevation is None else min_elevation
        criterion = RsapCriterion(criterion)
        col = {int(s): i for i, s in enumerate(self.constellation.ids)}

        def best_channel(user, candidates):
            cands = sorted(candidates)
            idx = np.array([col[m] for m in cands], dtype=int)
            b = self.beta_at(idx, t)[self.user_ids.index(user)]
            return dict(zip(cands, b.tolist()))

        def max_service_time(user, candidates):
            cands = sorted(candidates)
            key = (user, t, min_el)
            cache = self._zeta_cache.setdefault(key, {})
            todo = [m for m in cands if m not in cache]
            if todo:
                idx = np.array([col[m] for m in todo], dtype=int)
                upos = self.users[self.user_ids.index(user)].position
                z = service_times(self.constellation, upos, t, min_el, idx)
                cache.update(zip(todo, z.tolist()))
            return {m: cache[m] for m in cands}

        if criterion is RsapCriterion.BEST_CHANNEL:
            return best_channel
        return max_service_time

    def service_time(self, user: int, sat: int, t: float | None = None) -> float:
        return self.score_fn(RsapCriterion.MAX_SERVICE_TIME, t)(user, [sat])[sat]


def make_drop(
    index: int,
    constellation: Constellation,
    geometry: GeometryConfig,
    radio: RadioConfig,
    rng: np.random.Generator,
    time: float | None = None,
    num_users: int | None = None,
) -> Drop:
    num_users = geometry.num_users if num_users is None else num_users
    region = geometry.user_region
    users = drop_users(
        num_users, rng, region.center_lat, region.center_lon, region.radius_m,
        radio.user_gain_db,
    )
    u = float(rng.uniform())  # drawn even when unused, keeping later draws aligned
    period = constellation.max_period
    if time is not None:
        t0 = float(time)
    else:
        t0 = u * period if math.isfinite(period) else 0.0
    M = len(constellation)
    shadow = np.atleast_2d(ch.sample_shadowing(rng, radio.shadowing_var_db, (num_users, M)))
    aoa = rng.uniform(0.0, 2.0 * math.pi, (num_users, M))
    target = None
    if geometry.beam_pointing == "region_center":
        target = geodetic_to_cartesian(region.center_lat, region.center_lon)
    snap = take_snapshot(constellation, users, t0, target)
    above = snap.elevations >= FC_MIN_ELEVATION
    link_sats = np.flatnonzero(above.any(axis=0))
    drop = Drop(
        index, t0, users, constellation, radio, geometry.min_elevation_deg, target,
        shadow, aoa, snap, link_sats, np.zeros((num_users, link_sats.size)), rng,
    )
    drop.beta = drop.beta_at(link_sats, t0)
    return drop


def form_clusters(
    drop: Drop, policy: ClusterPolicy, criterion: RsapCriterion, tau_p: int
) -> PolicyState:
    policy = ClusterPolicy(policy)
    book = PilotBook(tau_p)
    uc_vis = drop.visibility(drop.uc_min_elevation)
    score = drop.score_fn(criterion)
    if policy is ClusterPolicy.FC:
        fc_vis = drop.visibility(FC_MIN_ELEVATION)
        # the RSAP is still chosen from the user's vicinity when it has one
        vis = {n: fc_vis[n] if uc_vis[n] else frozenset() for n in fc_vis}
        clusters, events = baseline_clusters(drop.user_ids, vis, score, policy, book, drop.time)
    elif policy is ClusterPolicy.NCT:
        clusters, events = baseline_clusters(drop.user_ids, uc_vis, score, policy, book, drop.time)
    else:
        clusters, events = initial_access(drop.user_ids, uc_vis, score, book, drop.time)
    sat_ids = drop.constellation.ids[drop.link_sats]
    a = serving_matrix(clusters, drop.user_ids, sat_ids)
    theta = delay_phases(drop, clusters)
    return PolicyState(policy, RsapCriterion(criterion), clusters, book, events, a, theta)


def delay_phases(drop: Drop, clusters) -> np.ndarray:
    """theta[n, m] relative to each user's RSAP (nearest satellite if unclustered)."""
    ranges = drop.snapshot.ranges[:, drop.link_sats]
    ref = ranges.min(axis=1)
    for i, n in enumerate(drop.user_ids):
        c = clusters.get(n)
        if c is not None:
            ref[i] = drop.snapshot.ranges[i, drop.snapshot.sat_index(c.rsap_id)]
    dt = (ranges - ref[:, None]) / SPEED_OF_LIGHT
    return ch.phase_shift(dt, drop.radio.symbol_duration)


@dataclass
class DropChannels:
    """Fading realizations of a drop for one antenna count."""

    los: np.ndarray  # (N, M', L)
    R: np.ndarray  # (N, M', L, L)
    h: np.ndarray  # (T, N, M', L) phase-free
    pilot_noise: np.ndarray  # (T, M', L, tau_p)


def sample_channels(drop: Drop, trials: int, tau_p: int, rng=None) -> DropChannels:
    rng = drop.rng if rng is None else rng
    radio = drop.radio
    L = radio.antennas_per_sat
    aoa = drop.aoa[:, drop.link_sats]
    los = ch.los_steering(
        aoa, L, radio.antenna_spacing_wavelengths * radio.wavelength, radio.wavelength
    )
    R = ch.correlation_matrix(drop.beta, radio.rician_k, los)
    g = ch.sample_small_scale(
        los, radio.rician_k, rng, trials, random_phase=radio.los_phase == "random"
    )
    h, _ = ch.realize_channel(drop.beta, g)
    noise = math.sqrt(radio.noise_power) * ch.crandn(
        rng, (trials, drop.link_sats.size, L, tau_p)
    )
    return DropChannels(los, R, h, noise)


def estimate_channels(
    drop: Drop, chans: DropChannels, state: PolicyState, tau_p: int, perfect_csi=False
):
    """Per-satellite LMMSE estimates and the expected estimate energies.

    Returns ``h_hat`` (T, N, M', L) and ``energy`` (N, M') = E||h_hat||^2.
    """
    if perfect_csi:
        energy = np.real(np.trace(chans.R, axis1=-2, axis2=-1)) * state.a
        return chans.h * state.a[None, :, :, None], energy
    radio = drop.radio
    p = np.full(len(drop.users), radio.pilot_power)
    sigma2 = radio.noise_power
    h_hat = np.zeros_like(chans.h)
    energy = np.zeros(state.a.shape)
    pilot_of = np.array([state.book.assignment.get(n, 0) for n in drop.user_ids])
    seqs = state.book.sequences[:, pilot_of]  # (tau_p, N)
    h_tilde = state.theta[None, :, :, None] * chans.h
    for j in range(drop.link_sats.size):
        served = state.a[:, j]
        if not served.any():
            continue
        Y = receive_pilots(h_tilde[:, :, j, :], p, served, seqs, 0.0)
        Y = Y + chans.pilot_noise[:, j]
        for n in np.flatnonzero(served):
            co = np.flatnonzero(pilot_of == pilot_of[n])
            pos = int(np.flatnonzero(co == n)[0])
            Rco = chans.R[co, j]
            y = despread(Y, seqs[:, n])
            W = lmmse_filter(chans.R[n, j], Rco, p[co], served[co], state.theta[n, j],
                             tau_p, sigma2, pos)
            h_hat[:, n, j, :] = y @ W.T
            Phi, _ = estimate_covariance(chans.R[n, j], Rco, p[co], served[co],
                                         tau_p, sigma2, pos)
            energy[n, j] = np.real(np.trace(Phi))
    return h_hat, energy


def evaluate_policy(
    drop: Drop,
    chans: DropChannels,
    state: PolicyState,
    mode: PrecoderMode,
    tau_p: int,
    tau_c: int,
    perfect_csi: bool = False,
    estimates=None,
    batches: int = 10,
) -> SEReport:
    h_hat, energy = estimates or estimate_channels(drop, chans, state, tau_p, perfect_csi)
    v = make_precoder(h_hat, state.theta[None], mode)
    power = allocate_power(state.a, energy, drop.radio.max_power)
    return evaluate_sinr_se(
        chans.h, v, state.theta, power, state.a, drop.radio.noise_power,
        tau_p, tau_c, batches,
    )


def coverage_times(
    drop: Drop,
    criterion: RsapCriterion,
    tau_p: int,
    step: float,
    horizon: float,
    stop_early: bool = True,
) -> tuple[dict[int, float], dict[int, float], list[ClusterEvent], list[str]]:
    """Step UC clusters from the drop time until each user's first handover.

    With ``stop_early=False`` stepping continues to the horizon, which is
    useful for checking cluster constraints over a long run. Users never
    handed over get the horizon as a censored value. Returns (coverage time per covered user, RSAP service time at formation,
    event log, constraint violations found along the way).
    """
    from .clustering import check_clusters

    book = PilotBook(tau_p)
    t = drop.time
    vis_of = _visibility_fn(drop)
    vis = vis_of(t)
    clusters, events = initial_access(drop.user_ids, vis, drop.score_fn(criterion, t), book, t)
    zeta = {n: drop.service_time(n, c.rsap_id, t) for n, c in clusters.items()}
    problems = check_clusters(clusters, vis, book)
    coverage: dict[int, float] = {}
    prev = vis
    k = 1
    while k * step <= horizon + 1e-9 and (len(coverage) < len(zeta) or not stop_early):
        tk = drop.time + k * step
        vis = vis_of(tk)
        evs = update_clusters(
            clusters, vis, prev, drop.score_fn(criterion, tk), book, tk, drop.user_ids
        )
        for e in evs:
            if e.kind is EventKind.HANDOVER and e.user in zeta and e.user not in coverage:
                coverage[e.user] = k * step
        events.extend(evs)
        problems.extend(f"t={tk}: {p}" for p in check_clusters(clusters, vis, book))
        prev = vis
        k += 1
    for n in zeta:
        coverage.setdefault(n, horizon)
    return coverage, zeta, events, problems


def _visibility_fn(drop: Drop):
    upos = drop.snapshot.user_positions
    ids = drop.constellation.ids

    def vis(t):
        el = elevation_angle(drop.constellation.positions(t)[None], upos[:, None])
        ok = el >= drop.uc_min_elevation
        return {n: frozenset(int(s) for s in ids[ok[i]]) for i, n in enumerate(drop.user_ids)}

    return vis
