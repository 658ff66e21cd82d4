"""
Large-scale gains, Rician small-scale fading and delay phase shifts.

Array functions broadcast over leading axes; the antenna axis is last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j1

from .constellation import SPEED_OF_LIGHT

ANTENNA_LOSS_CAP_DB = 60.0


@dataclass
class RadioConfig:
    frequency_mhz: float = 2000.0
    bandwidth_hz: float = 1.0e6
    antennas_per_sat: int = 4
    antenna_spacing_wavelengths: float = 0.5
    rician_k: float = 10.0
    shadowing_var_db: float = 5.0
    other_losses_db: float = 0.0
    sat_gain_dbi: float = 30.0
    user_gain_db: float = 0.0
    antenna_aperture_wavelengths: float = 10.0
    noise_psd_dbm_hz: float = -174.0
    max_power_dbw: float = 15.0
    pilot_power_dbw: float = 0.0
    symbol_duration_s: float | None = None  # default 1 / bandwidth
    los_phase: str = "random"  # "random": uniform LoS phase per realization; "fixed"

    def __post_init__(self):
        if self.frequency_mhz <= 0:
            raise ValueError("frequency_mhz must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.antennas_per_sat < 1:
            raise ValueError("antennas_per_sat must be >= 1")
        if self.rician_k < 0:
            raise ValueError("rician_k must be non-negative")
        if self.shadowing_var_db < 0:
            raise ValueError("shadowing_var_db must be non-negative")
        if self.symbol_duration_s is not None and self.symbol_duration_s <= 0:
            raise ValueError("symbol_duration_s must be positive")
        if self.antenna_aperture_wavelengths <= 0:
            raise ValueError("antenna_aperture_wavelengths must be positive")
        if self.los_phase not in ("random", "fixed"):
            raise ValueError("los_phase must be 'random' or 'fixed'")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / (self.frequency_mhz * 1e6)

    @property
    def symbol_duration(self) -> float:
        if self.symbol_duration_s is not None:
            return self.symbol_duration_s
        return 1.0 / self.bandwidth_hz

    @property
    def noise_power(self) -> float:
        """Thermal noise power over the band, in watts."""
        dbm = self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def max_power(self) -> float:
        return 10.0 ** (self.max_power_dbw / 10.0)

    @property
    def pilot_power(self) -> float:
        return 10.0 ** (self.pilot_power_dbw / 10.0)


@dataclass
class LargeScale:
    beta: np.ndarray  # linear power gain
    fspl_db: np.ndarray
    shadow_db: np.ndarray
    ant_loss_db: np.ndarray
    other_db: np.ndarray
    gain_db: np.ndarray  # satellite + user antenna gain

    @property
    def beta_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.beta)


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def free_space_path_loss(f_mhz, r_km):
    """Free-space loss in dB with frequency in MHz and distance in km."""
    f_mhz = np.asarray(f_mhz, dtype=float)
    r_km = np.asarray(r_km, dtype=float)
    if np.any(f_mhz <= 0) or np.any(r_km <= 0):
        raise ValueError("frequency and distance must be positive")
    out = 32.45 + 20.0 * np.log10(f_mhz) + 20.0 * np.log10(r_km)
    return float(out) if out.ndim == 0 else out


def antenna_loss(w, eta, cap_db: float = ANTENNA_LOSS_CAP_DB):
    """Beam-misalignment loss factor (linear, >= 1) of a circular aperture.

    ``w`` is the off-boresight angle in radians and ``eta`` the aperture
    radius in wavelengths. Loss near the nulls of J1 is capped at ``cap_db``.
    """
    if np.any(np.asarray(eta) <= 0):
        raise ValueError("eta must be positive")
    x = 2.0 * np.pi * np.asarray(eta, dtype=float) * np.sin(np.asarray(w, dtype=float))
    x = np.abs(x)
    small = x < 1e-8
    xs = np.where(small, 1.0, x)
    with np.errstate(divide="ignore"):
        loss = 0.25 * (xs / np.abs(j1(xs))) ** 2
    loss = np.where(small, 1.0, loss)
    loss = np.minimum(loss, 10.0 ** (cap_db / 10.0))
    return float(loss) if loss.ndim == 0 else loss


def sample_shadowing(rng: np.random.Generator, var_db: float, size=None):
    if var_db < 0:
        raise ValueError("shadowing variance must be non-negative")
    if var_db == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, math.sqrt(var_db), size)


def large_scale(
    range_m,
    boresight,
    cfg: RadioConfig,
    rng: np.random.Generator | None = None,
    shadow_db=None,
) -> LargeScale:
    """Large-scale gain beta of each link, with all losses in dB.

    Shadowing is drawn from ``rng`` unless ``shadow_db`` is given; with
    neither it is switched off.
    """
    range_m = np.asarray(range_m, dtype=float)
    fspl = np.asarray(free_space_path_loss(cfg.frequency_mhz, range_m / 1e3))
    if shadow_db is None:
        shadow_db = (
            sample_shadowing(rng, cfg.shadowing_var_db, range_m.shape)
            if rng is not None
            else np.zeros(range_m.shape)
        )
    shadow_db = np.broadcast_to(np.asarray(shadow_db, dtype=float), range_m.shape)
    ant_db = 10.0 * np.log10(antenna_loss(boresight, cfg.antenna_aperture_wavelengths))
    ant_db = np.broadcast_to(ant_db, range_m.shape)
    other = np.full(range_m.shape, cfg.other_losses_db)
    gain = np.full(range_m.shape, cfg.sat_gain_dbi + cfg.user_gain_db)
    beta = db2lin(gain - fspl - shadow_db - ant_db - other)
    return LargeScale(beta, fspl, shadow_db, ant_db, other, gain)


def los_steering(aoa, num_antennas: int, spacing, wavelength) -> np.ndarray:
    """Uniform-linear-array response; element l is exp(-j l 2pi d/lambda sin(aoa))."""
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    aoa = np.asarray(aoa, dtype=float)
    ell = np.arange(num_antennas)
    return np.exp(-1j * ell * 2.0 * np.pi * (spacing / wavelength) * np.sin(aoa)[..., None])


def rician_weights(kappa: float) -> tuple[float, float]:
    """Amplitude weights of the LoS and scattered parts."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if math.isinf(kappa):
        return 1.0, 0.0
    return math.sqrt(kappa / (1.0 + kappa)), math.sqrt(1.0 / (1.0 + kappa))


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_small_scale(los, kappa: float, rng: np.random.Generator, size=(), random_phase=False):
    """Draw g = w_los * los + w_nlos * g'' with ``size`` leading sample axes.

    With ``random_phase`` the LoS part of every realization is rotated by
    a uniform phase. The second moment is unchanged but g becomes zero-mean,
    so links of different users are uncorrelated.
    """
    los = np.asarray(los)
    size = (size,) if isinstance(size, int) else tuple(size)
    w_los, w_nlos = rician_weights(kappa)
    shape = size + los.shape
    if random_phase:
        phi = rng.uniform(0.0, 2.0 * np.pi, shape[:-1])
        los = np.exp(1j * phi)[..., None] * los
    if w_nlos == 0.0:
        return np.broadcast_to(w_los * los, shape).copy()
    return w_los * los + w_nlos * crandn(rng, shape)


def phase_shift(dt, symbol_duration: float):
    """Unit-modulus delay phase exp(-j 2pi dt / Ts)."""
    if symbol_duration <= 0:
        raise ValueError("symbol_duration must be positive")
    # reduce modulo one symbol first so |theta| stays exactly 1 for large offsets
    frac = np.mod(np.asarray(dt, dtype=float) / symbol_duration, 1.0)
    theta = _unit_modulus(np.cos(2.0 * np.pi * frac), -np.sin(2.0 * np.pi * frac))
    return complex(theta) if theta.ndim == 0 else theta


_ULP_STEPS = (0, 1, -1, 2, -2, 3, -3)


def _unit_modulus(c, s):
    """c + js nudged by a few ulps so that abs() is exactly 1.0."""
    c, s = np.array(c, dtype=float), np.array(s, dtype=float)
    ok = np.abs(c + 1j * s) == 1.0
    for dc in _ULP_STEPS:
        for ds in _ULP_STEPS:
            if ok.all():
                return c + 1j * s
            cc = c + dc * np.spacing(c)
            ss = s + ds * np.spacing(s)
            hit = ~ok & (np.abs(cc + 1j * ss) == 1.0)
            c, s = np.where(hit, cc, c), np.where(hit, ss, s)
            ok |= hit
    return c + 1j * s


def correlation_matrix(beta, kappa: float, los) -> np.ndarray:
    """Second-moment matrix E[h h^H] of h = sqrt(beta) g."""
    los = np.asarray(los)
    beta = np.asarray(beta, dtype=float)
    w_los, w_nlos = rician_weights(kappa)
    L = los.shape[-1]
    outer = los[..., :, None] * los[..., None, :].conj()
    R = w_los ** 2 * outer + w_nlos ** 2 * np.eye(L)
    R = beta[..., None, None] * R
    # keep the Hermitian part exactly
    return 0.5 * (R + np.swapaxes(R, -1, -2).conj())


def realize_channel(beta, g, theta=1.0):
    """Return the phase-free channel h = sqrt(beta) g and h_tilde = theta h."""
    beta = np.asarray(beta, dtype=float)
    h = np.sqrt(beta)[..., None] * g
    h_tilde = np.asarray(theta)[..., None] * h
    return h, h_tilde
