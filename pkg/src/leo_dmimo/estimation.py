"""
Uplink pilot reception and per-satellite LMMSE channel estimation.

Leading axes of channel arrays are treated as independent realizations
(e.g. Monte Carlo trials), so one call processes a whole batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import crandn


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray
    error_covariance: np.ndarray


def receive_pilots(
    h_tilde,
    powers,
    served,
    pilots,
    noise_var: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Received pilot block at one satellite.

    h_tilde : (..., K, L) effective channels of K users towards the satellite
    powers : (K,) pilot powers
    served : (K,) 0/1 indicators of the satellite being in each user's cluster
    pilots : (tau_p, K) pilot sequence of each user as columns
    Returns (..., L, tau_p).
    """
    h_tilde = np.asarray(h_tilde)
    amp = np.sqrt(np.asarray(served, dtype=float) * np.asarray(powers, dtype=float))
    Y = np.einsum("...kl,tk->...lt", h_tilde * amp[:, None], np.asarray(pilots))
    if noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        Y = Y + math.sqrt(noise_var) * crandn(rng, Y.shape)
    return Y


def despread(Y, xi) -> np.ndarray:
    """Project the pilot block onto one sequence: Y xi* / sqrt(tau_p)."""
    xi = np.asarray(xi)
    return np.asarray(Y) @ xi.conj() / math.sqrt(xi.shape[0])


def lmmse_filter(R_n, R_copilot, powers, served, theta, tau_p: int, noise_var: float, index=0):
    """Linear filter W with h_hat = W y for the despread observation.

    R_copilot : (J, L, L) correlation matrices of the co-pilot users
        (including the target user at position ``index``)
    powers, served : (J,) pilot powers and serving indicators at this satellite
    theta : delay phase of the target user's link
    """
    R_copilot = np.asarray(R_copilot)
    weights = tau_p * np.asarray(powers, dtype=float) * np.asarray(served, dtype=float)
    L = R_copilot.shape[-1]
    Psi = np.tensordot(weights, R_copilot, axes=1) + noise_var * np.eye(L)
    a_n = float(np.asarray(served)[index])
    p_n = float(np.asarray(powers)[index])
    if a_n == 0.0:
        return np.zeros((L, L), dtype=complex)
    # R Psi^-1 = (Psi^-H R^H)^H = (Psi^-1 R)^H, both Hermitian
    RPsi = np.linalg.solve(Psi, np.asarray(R_n)).conj().T
    return math.sqrt(tau_p * p_n * a_n) * np.conj(theta) * RPsi


def estimate_covariance(R_n, R_copilot, powers, served, tau_p: int, noise_var: float, index=0):
    """E[h_hat h_hat^H] and the error covariance R - E[h_hat h_hat^H]."""
    W = lmmse_filter(R_n, R_copilot, powers, served, 1.0, tau_p, noise_var, index)
    a_n = float(np.asarray(served)[index])
    p_n = float(np.asarray(powers)[index])
    R_n = np.asarray(R_n)
    Phi = math.sqrt(tau_p * p_n * a_n) * W @ R_n
    Phi = 0.5 * (Phi + Phi.conj().T)
    return Phi, R_n - Phi


def lmmse_estimate(y, R_n, R_copilot, powers, served, theta, tau_p: int, noise_var: float, index=0):
    """LMMSE estimate of the phase-free channel from the despread observation."""
    W = lmmse_filter(R_n, R_copilot, powers, served, theta, tau_p, noise_var, index)
    h_hat = np.asarray(y) @ W.T
    _, err = estimate_covariance(R_n, R_copilot, powers, served, tau_p, noise_var, index)
    return ChannelEstimate(h_hat, err)
