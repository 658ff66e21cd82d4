"""
User-centric serving-cluster formation, update and handover.

Visibility is passed in as ``{user_id: set of satellite ids}`` and RSAP
scores through a callable ``score_fn(user_id, candidates) -> {sat: score}``
so that costly scores (service times) are only computed when a user
actually needs an RSAP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np

from .pilots import PilotBook

ScoreFn = Callable[[int, Iterable[int]], Mapping[int, float]]


class RsapCriterion(str, Enum):
    BEST_CHANNEL = "best_channel"
    MAX_SERVICE_TIME = "max_service_time"


class ClusterPolicy(str, Enum):
    UC = "uc"
    FC = "fc"
    NCT = "nct"


class EventKind(str, Enum):
    JOIN = "JOIN"
    LEAVE = "LEAVE"
    HANDOVER = "HANDOVER"
    DENY = "DENY"
    NO_COVERAGE = "NO_COVERAGE"


class NoCoverage(Exception):
    pass


@dataclass(frozen=True)
class ClusterEvent:
    time: float
    kind: EventKind
    user: int
    satellite: int  # -1 when not tied to a satellite

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "kind": self.kind.value, "user": self.user,
             "satellite": self.satellite},
            sort_keys=True,
        )


@dataclass
class ServingCluster:
    user_id: int
    rsap_id: int
    pilot_index: int
    members: set[int] = field(default_factory=set)
    formed_at: float = 0.0


def select_rsap(candidates: Iterable[int], scores: Mapping[int, float]) -> int:
    """Arg-max of the scores over the candidates; lowest id wins ties."""
    cands = sorted(candidates)
    if not cands:
        raise NoCoverage("no candidate satellite")
    best = cands[0]
    for m in cands[1:]:
        if scores[m] > scores[best]:
            best = m
    return best


def _access_one(user, visible, score_fn, book, time, events, join_others=True):
    """Initial access for one user; returns its cluster or None."""
    candidates = set(visible)
    scores = score_fn(user, candidates) if candidates else {}
    while candidates:
        rsap = select_rsap(candidates, scores)
        pilot = book.assign_pilot(user, rsap)
        if pilot is None:
            events.append(ClusterEvent(time, EventKind.DENY, user, rsap))
            candidates.discard(rsap)
            continue
        cluster = ServingCluster(user, rsap, pilot, {rsap}, time)
        events.append(ClusterEvent(time, EventKind.JOIN, user, rsap))
        if join_others:
            for m in sorted(set(visible) - {rsap}):
                if book.is_free(m, pilot):
                    book.occupy(m, pilot, user)
                    cluster.members.add(m)
                    events.append(ClusterEvent(time, EventKind.JOIN, user, m))
        return cluster
    events.append(ClusterEvent(time, EventKind.NO_COVERAGE, user, -1))
    return None


def initial_access(
    users: Iterable[int],
    visibility: Mapping[int, Iterable[int]],
    score_fn: ScoreFn,
    book: PilotBook,
    time: float = 0.0,
) -> tuple[dict[int, ServingCluster], list[ClusterEvent]]:
    """Form serving clusters for users in ascending id order.

    Each user picks the best-scoring visible satellite as RSAP, retrying
    with the next candidate when the RSAP has no free pilot. The RSAP
    assigns its lowest free pilot; every other visible satellite where
    that pilot is free joins the cluster.
    """
    clusters: dict[int, ServingCluster] = {}
    events: list[ClusterEvent] = []
    for n in sorted(users):
        c = _access_one(n, visibility.get(n, ()), score_fn, book, time, events)
        if c is not None:
            clusters[n] = c
    return clusters, events


def update_clusters(
    clusters: dict[int, ServingCluster],
    visibility: Mapping[int, Iterable[int]],
    previous_visibility: Mapping[int, Iterable[int]],
    score_fn: ScoreFn,
    book: PilotBook,
    time: float,
    users: Iterable[int] | None = None,
) -> list[ClusterEvent]:
    """Advance clusters to a new visibility epoch, in place.

    Users whose RSAP is still visible admit newly visible satellites when
    their pilot is free there and drop members that went out of view.
    Users whose RSAP left view hand over: their pilot slots are released
    and initial access is re-run for them alone. Users without a cluster
    (listed in ``users``) retry initial access.
    """
    events: list[ClusterEvent] = []
    all_users = set(clusters) if users is None else set(users) | set(clusters)
    for n in sorted(all_users):
        vis = set(visibility.get(n, ()))
        c = clusters.get(n)
        if c is None:
            c = _access_one(n, vis, score_fn, book, time, events)
            if c is not None:
                clusters[n] = c
            continue
        if c.rsap_id in vis:
            new = vis - set(previous_visibility.get(n, ()))
            for m in sorted(new - c.members):
                if book.is_free(m, c.pilot_index):
                    book.occupy(m, c.pilot_index, n)
                    c.members.add(m)
                    events.append(ClusterEvent(time, EventKind.JOIN, n, m))
            for m in sorted(c.members - vis):
                c.members.discard(m)
                book.release(m, n)
                events.append(ClusterEvent(time, EventKind.LEAVE, n, m))
        else:
            events.append(ClusterEvent(time, EventKind.HANDOVER, n, c.rsap_id))
            book.release_user(n)
            del clusters[n]
            c = _access_one(n, vis, score_fn, book, time, events)
            if c is not None:
                clusters[n] = c
    return events


def baseline_clusters(
    users: Iterable[int],
    visibility: Mapping[int, Iterable[int]],
    score_fn: ScoreFn,
    policy: ClusterPolicy,
    book: PilotBook,
    time: float = 0.0,
) -> tuple[dict[int, ServingCluster], list[ClusterEvent]]:
    """Full-cooperation or single-satellite clusters.

    FC: every visible satellite serves the user. When the users fit in the
    pilot book they get globally distinct pilots so that no gating occurs;
    otherwise the greedy gated rule applies. NCT: the RSAP alone.
    """
    users = sorted(users)
    events: list[ClusterEvent] = []
    clusters: dict[int, ServingCluster] = {}
    policy = ClusterPolicy(policy)
    if policy is ClusterPolicy.UC:
        return initial_access(users, visibility, score_fn, book, time)
    if policy is ClusterPolicy.FC and len(users) <= book.tau_p:
        for pilot, n in enumerate(users):
            vis = set(visibility.get(n, ()))
            if not vis:
                events.append(ClusterEvent(time, EventKind.NO_COVERAGE, n, -1))
                continue
            rsap = select_rsap(vis, score_fn(n, vis))
            book.assignment[n] = pilot
            c = ServingCluster(n, rsap, pilot, set(), time)
            for m in [rsap] + sorted(vis - {rsap}):
                book.occupy(m, pilot, n)
                c.members.add(m)
                events.append(ClusterEvent(time, EventKind.JOIN, n, m))
            clusters[n] = c
        return clusters, events
    join_others = policy is ClusterPolicy.FC
    for n in users:
        c = _access_one(n, visibility.get(n, ()), score_fn, book, time, events, join_others)
        if c is not None:
            clusters[n] = c
    return clusters, events


def check_clusters(
    clusters: Mapping[int, ServingCluster],
    visibility: Mapping[int, Iterable[int]],
    book: PilotBook,
) -> list[str]:
    """Independent constraint checker; returns a list of violations."""
    problems = []
    holders: dict[tuple[int, int], int] = {}
    for n, c in clusters.items():
        vis = set(visibility.get(n, ()))
        if c.rsap_id not in c.members:
            problems.append(f"user {n}: RSAP {c.rsap_id} not in cluster")
        if not c.members <= vis:
            problems.append(f"user {n}: members {sorted(c.members - vis)} not visible")
        if book.assignment.get(n) != c.pilot_index:
            problems.append(f"user {n}: pilot mismatch with book")
        for m in c.members:
            key = (m, c.pilot_index)
            if key in holders:
                problems.append(
                    f"satellite {m}: pilot {c.pilot_index} used by {holders[key]} and {n}"
                )
            holders[key] = n
            if book.occupancy.get(m, {}).get(c.pilot_index) != n:
                problems.append(f"satellite {m}: occupancy does not record user {n}")
    return problems


def serving_matrix(clusters: Mapping[int, ServingCluster], user_ids, sat_ids):
    """0/1 array a[n, m] in the order of ``user_ids`` x ``sat_ids``."""
    col = {int(m): j for j, m in enumerate(sat_ids)}
    a = np.zeros((len(user_ids), len(sat_ids)))
    for i, n in enumerate(user_ids):
        c = clusters.get(int(n))
        if c is None:
            continue
        for m in c.members:
            a[i, col[m]] = 1.0
    return a
