"""Orthogonal pilot book with per-satellite occupancy."""

from __future__ import annotations

import copy
from typing import Mapping

import numpy as np


def pilot_sequences(tau_p: int) -> np.ndarray:
    """DFT columns; column k is the k-th pilot, each with squared norm tau_p."""
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    n = np.arange(tau_p)
    return np.exp(-2j * np.pi * np.outer(n, n) / tau_p)


class PilotBook:
    """Pilot sequences plus the user -> pilot map and satellite occupancy.

    A pilot index is occupied at satellite ``m`` when some user that ``m``
    serves was trained on it. Each satellite holds at most one user per
    pilot index.
    """

    def __init__(self, tau_p: int):
        self.tau_p = int(tau_p)
        self.sequences = pilot_sequences(self.tau_p)
        self.assignment: dict[int, int] = {}
        self.occupancy: dict[int, dict[int, int]] = {}

    def sequence(self, index: int) -> np.ndarray:
        return self.sequences[:, index]

    def is_free(self, sat: int, pilot: int) -> bool:
        return pilot not in self.occupancy.get(sat, {})

    def occupy(self, sat: int, pilot: int, user: int) -> None:
        slots = self.occupancy.setdefault(sat, {})
        holder = slots.get(pilot)
        if holder is not None and holder != user:
            raise ValueError(f"pilot {pilot} at satellite {sat} already held by user {holder}")
        slots[pilot] = user

    def release(self, sat: int, user: int) -> None:
        slots = self.occupancy.get(sat, {})
        for pilot in [p for p, u in slots.items() if u == user]:
            del slots[pilot]
        if sat in self.occupancy and not slots:
            del self.occupancy[sat]

    def release_user(self, user: int) -> None:
        for sat in list(self.occupancy):
            self.release(sat, user)
        self.assignment.pop(user, None)

    def assign_pilot(self, user: int, rsap: int) -> int | None:
        """Give ``user`` the lowest pilot free at ``rsap``; None when all are taken."""
        if user in self.assignment:
            raise ValueError(f"user {user} already holds pilot {self.assignment[user]}")
        taken = self.occupancy.get(rsap, {})
        for pilot in range(self.tau_p):
            if pilot not in taken:
                self.assignment[user] = pilot
                self.occupy(rsap, pilot, user)
                return pilot
        return None

    def served_by(self, sat: int) -> set[int]:
        return set(self.occupancy.get(sat, {}).values())

    def copy(self) -> "PilotBook":
        return copy.deepcopy(self)


def build_pilot_book(tau_p: int) -> PilotBook:
    return PilotBook(tau_p)


def co_pilot_set(user: int, assignment: Mapping[int, int]) -> set[int]:
    pilot = assignment[user]
    return {u for u, p in assignment.items() if p == pilot}
