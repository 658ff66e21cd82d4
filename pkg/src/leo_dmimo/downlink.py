"""
Maximum-ratio precoding with equal-split power, evaluated by Monte Carlo.

Array conventions: ``h``, ``h_hat`` and ``v`` are (T, N, M, L) with T
trials, N users, M satellites and L antennas; ``theta``, ``a`` and
``power`` are (N, M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np


class PrecoderMode(str, Enum):
    PHASE_AWARE = "phase_aware"
    ASYNCHRONOUS = "asynchronous"


def make_precoder(h_hat, theta, mode: PrecoderMode):
    """MR precoder; phase-aware mode pre-rotates by the delay phase."""
    h_hat = np.asarray(h_hat)
    if PrecoderMode(mode) is PrecoderMode.PHASE_AWARE:
        return np.asarray(theta)[..., None] * h_hat
    return h_hat.copy()


def allocate_power(a, expected_norm2, max_power: float):
    """Equal split of each satellite's budget over the users it serves.

    kappa[n, m] = P_max / (|served(m)| * E||v_nm||^2), so the expected
    radiated power of every satellite equals P_max (or zero when idle).
    """
    a = np.asarray(a, dtype=float)
    en = np.asarray(expected_norm2, dtype=float)
    load = a.sum(axis=0)  # users per satellite
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(
            (a > 0) & (en > 0), max_power / (np.maximum(load, 1.0)[None, :] * en), 0.0
        )
    return kappa


def received_gains(h, v, theta, power, a):
    """Per-trial gains G[t, n, i] of user i's stream at user n.

    G = sum_m sqrt(kappa_im a_im) (theta_nm h_nm)^H v_im, i.e. the
    downlink channel carries the delay phase of its own link.
    """
    h = np.asarray(h)
    amp = np.sqrt(np.asarray(power, dtype=float) * np.asarray(a, dtype=float))
    ht = np.asarray(theta)[None, :, :, None] * h
    return np.einsum("tnml,timl->tni", ht.conj(), amp[None, :, :, None] * v, optimize=True)


@dataclass
class SEReport:
    coherent_gain: np.ndarray  # |E[signal]|^2 per user
    uncertainty: np.ndarray  # E_n, variance of the signal term
    interference: np.ndarray  # F_n
    noise: float
    sinr: np.ndarray
    se: np.ndarray
    prelog: float
    trials: int
    sinr_stderr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    imprecise: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def _sinr_from_gains(G, noise_var):
    N = G.shape[1]
    idx = np.arange(N)
    sig = G[:, idx, idx]
    mean = sig.mean(axis=0)
    coherent = np.abs(mean) ** 2
    unc = np.mean(np.abs(sig - mean) ** 2, axis=0)
    power = np.mean(np.abs(G) ** 2, axis=0)  # (n, i)
    power[idx, idx] = 0.0
    interf = power.sum(axis=1)
    sinr = coherent / (unc + interf + noise_var)
    return coherent, unc, interf, sinr


def evaluate_sinr_se(
    h,
    v,
    theta,
    power,
    a,
    noise_var: float,
    tau_p: int,
    tau_c: int,
    batches: int = 10,
) -> SEReport:
    """Monte Carlo evaluation of the SINR expression per user.

    The numerator is |E[sum_m sqrt(kappa a) h_tilde^H v]|^2, the
    denominator the variance of that sum plus the mean interference power
    from every other user's stream plus noise. The standard error of the
    SINR comes from ``batches`` equal trial batches.
    """
    if not 0 <= tau_p < tau_c:
        raise ValueError("need 0 <= tau_p < tau_c")
    G = received_gains(h, v, theta, power, a)
    T = G.shape[0]
    if T < 1:
        raise ValueError("need at least one trial")
    coherent, unc, interf, sinr = _sinr_from_gains(G, noise_var)
    prelog = 1.0 - tau_p / tau_c
    se = prelog * np.log2(1.0 + sinr)
    nb = min(batches, T)
    if nb >= 2:
        size = T // nb
        parts = np.array(
            [_sinr_from_gains(G[b * size:(b + 1) * size], noise_var)[3] for b in range(nb)]
        )
        stderr = parts.std(axis=0, ddof=1) / math.sqrt(nb)
    else:
        stderr = np.full(sinr.shape, np.nan)
    imprecise = stderr > 0.1 * sinr
    return SEReport(coherent, unc, interf, noise_var, sinr, se, prelog, T, stderr, imprecise)


def radiated_power(v, power, a):
    """Per-trial radiated power of each satellite, shape (T, M)."""
    amp2 = np.asarray(power, dtype=float) * np.asarray(a, dtype=float)
    return np.einsum("nm,tnm->tm", amp2, np.sum(np.abs(v) ** 2, axis=-1))


def run_baseline_comparison(config) -> Mapping[str, list]:
    """Per-user SE records of the UC, FC and NCT policies over paired drops."""
    from .harness import run

    result = run(config)
    out: dict[str, list] = {}
    for rec in result.records:
        out.setdefault(rec["policy"], []).append(rec)
    return out
