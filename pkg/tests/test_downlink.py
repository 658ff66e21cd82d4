import math

import numpy as np
import pytest

from leo_dmimo.channel import RadioConfig, crandn
from leo_dmimo.constellation import (
    GeometryConfig,
    Orbit,
    Satellite,
    StaticConstellation,
    UserRegion,
    build_constellation,
)
from leo_dmimo.downlink import (
    PrecoderMode,
    allocate_power,
    evaluate_sinr_se,
    make_precoder,
    radiated_power,
    received_gains,
)
from leo_dmimo.scenario import (
    estimate_channels,
    evaluate_policy,
    form_clusters,
    make_drop,
    sample_channels,
)

PA, ASYNC = PrecoderMode.PHASE_AWARE, PrecoderMode.ASYNCHRONOUS


def test_precoder_modes():
    rng = np.random.default_rng(0)
    h = crandn(rng, (2, 1, 3, 4))
    one = np.ones((1, 3))
    np.testing.assert_array_equal(make_precoder(h, one, PA), make_precoder(h, one, ASYNC))
    np.testing.assert_allclose(make_precoder(h, -1j * one, PA), -1j * h)


def test_single_link_gains_arithmetic():
    rng = np.random.default_rng(1)
    h = crandn(rng, (1, 1, 1, 4))
    theta = np.array([[np.exp(-0.7j)]])
    a = np.ones((1, 1))
    for mode, expect in ((PA, 1.0), (ASYNC, np.conj(theta[0, 0]))):
        G = received_gains(h, make_precoder(h, theta, mode), theta, a, a)[0, 0, 0]
        assert G == pytest.approx(np.sum(np.abs(h) ** 2) * expect, rel=1e-12)


def test_power_split():
    a = np.array([[1, 1], [0, 1], [0, 1], [0, 1]], dtype=float)
    en = np.array([[2.0, 0.5], [1.0, 0.5], [1.0, 0.5], [1.0, 0.5]])
    k = allocate_power(a, en, 10.0)
    assert k[0, 0] * en[0, 0] == pytest.approx(10.0)
    np.testing.assert_allclose(k[:, 1] * en[:, 1], 2.5)
    assert np.all(k[1:, 0] == 0)


def test_random_topology_budget():
    rng = np.random.default_rng(2)
    T, N, M, L = 10_000, 5, 6, 2
    a = (rng.uniform(size=(N, M)) < 0.6).astype(float)
    scale = rng.uniform(0.5, 2.0, (N, M))
    v = np.sqrt(scale)[None, :, :, None] * crandn(rng, (T, N, M, L))
    k = allocate_power(a, scale * L, 3.0)
    P = radiated_power(v, k, a).mean(axis=0)
    served = a.sum(axis=0) > 0
    assert np.all(P <= 3.0 * 1.02)
    np.testing.assert_allclose(P[served], 3.0, rtol=0.02)


def _single_link_drop(rician_k=math.inf):
    geo = GeometryConfig(num_satellites=1, num_users=1, user_region=UserRegion(0.0, 0.0, 0.0))
    radio = RadioConfig(rician_k=rician_k, shadowing_var_db=0.0, antennas_per_sat=4)
    const = StaticConstellation([Satellite(0, Orbit(600e3, 0.0, 0.0, 0.0))])
    return make_drop(0, const, geo, radio, np.random.default_rng(0))


def test_degenerate_sinr_closed_form():
    d = _single_link_drop()
    chans = sample_channels(d, 10_000, 30)
    st = form_clusters(d, "uc", "best_channel", 30)
    rep = evaluate_policy(d, chans, st, PA, 30, 200, perfect_csi=True)
    r = d.radio
    closed = r.max_power * d.beta[0, 0] * r.antennas_per_sat / r.noise_power
    assert rep.sinr[0] == pytest.approx(closed, rel=0.02)
    assert rep.prelog == 0.85 and rep.uncertainty[0] == pytest.approx(0.0, abs=1e-20)


def test_zero_power_gives_zero_sinr():
    rng = np.random.default_rng(3)
    h = crandn(rng, (50, 2, 3, 2))
    z = np.zeros((2, 3))
    rep = evaluate_sinr_se(h, h, np.ones((2, 3)), z, np.ones((2, 3)), 1.0, 30, 200)
    assert np.all(rep.sinr == 0) and np.all(rep.se == 0)


def _toy(rng, T=400, N=4, M=3, L=2):
    beta = rng.uniform(0.2, 1.0, (N, M))
    h = np.sqrt(beta)[None, :, :, None] * crandn(rng, (T, N, M, L))
    theta = np.exp(-2j * np.pi * rng.uniform(size=(N, M)))
    h_hat = h + 0.3 * crandn(rng, h.shape)
    a = np.ones((N, M))
    k = allocate_power(a, np.full((N, M), 1.3 * L), 1.0)
    return h, h_hat, theta, a, k


def test_prelog_exact_and_validation():
    rng = np.random.default_rng(4)
    h, h_hat, theta, a, k = _toy(rng)
    rep = evaluate_sinr_se(h, make_precoder(h_hat, theta, PA), theta, k, a, 0.1, 30, 200)
    np.testing.assert_allclose(rep.se / np.log2(1 + rep.sinr), 0.85, rtol=1e-14)
    with pytest.raises(ValueError):
        evaluate_sinr_se(h, h, theta, k, a, 0.1, 200, 200)


def test_removing_interferer_never_hurts():
    rng = np.random.default_rng(5)
    h, h_hat, theta, a, k = _toy(rng)
    v = make_precoder(h_hat, theta, PA)
    base = evaluate_sinr_se(h, v, theta, k, a, 0.1, 30, 200).sinr
    for i in range(4):
        k2 = k.copy()
        k2[i] = 0.0
        s = evaluate_sinr_se(h, v, theta, k2, a, 0.1, 30, 200).sinr
        others = [n for n in range(4) if n != i]
        assert np.all(s[others] >= base[others] - 1e-15)


def test_stderr_scales_with_trials():
    ratios = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        h, h_hat, theta, a, k = _toy(rng, T=4000)
        v = make_precoder(h_hat, theta, PA)
        half = evaluate_sinr_se(h[:2000], v[:2000], theta, k, a, 0.1, 30, 200, batches=20)
        full = evaluate_sinr_se(h, v, theta, k, a, 0.1, 30, 200, batches=20)
        ratios.append(np.mean(full.sinr_stderr / half.sinr_stderr))
    assert np.mean(ratios) == pytest.approx(1 / math.sqrt(2), rel=0.2)


def _region_drop(seed, M=100):
    geo = GeometryConfig(num_satellites=M, min_elevation_deg=5.0, beam_pointing="region_center",
                         user_region=UserRegion(45.0, 0.0, 50e3))
    rng = np.random.default_rng(seed)
    return make_drop(seed, build_constellation(geo), geo, RadioConfig(), rng)


def test_perfect_csi_and_phase_compensation_bounds():
    gaps, coh = [], []
    for seed in range(12):
        d = _region_drop(seed)
        chans = sample_channels(d, 100, 30)
        st = form_clusters(d, "uc", "best_channel", 30)
        est = estimate_channels(d, chans, st, 30)
        lm = evaluate_policy(d, chans, st, PA, 30, 200, estimates=est)
        pf = evaluate_policy(d, chans, st, PA, 30, 200, perfect_csi=True)
        asy = evaluate_policy(d, chans, st, ASYNC, 30, 200, estimates=est)
        gaps.append(pf.se.mean() - lm.se.mean())
        coh.append(np.mean(lm.coherent_gain - asy.coherent_gain))
    assert np.mean(gaps) >= 0
    assert np.mean(coh) > 0


def test_nct_equals_fc_when_clusters_are_singletons():
    d = _region_drop(1)
    chans = sample_channels(d, 50, 30)
    nct = form_clusters(d, "nct", "best_channel", 30)
    fc = form_clusters(d, "fc", "best_channel", 30)
    fc.a, fc.theta, fc.book = nct.a, nct.theta, nct.book
    r1 = evaluate_policy(d, chans, nct, PA, 30, 200)
    r2 = evaluate_policy(d, chans, fc, PA, 30, 200)
    np.testing.assert_array_equal(r1.sinr, r2.sinr)


def test_uc_beats_nct_in_most_paired_drops():
    wins = 0
    drops = 20
    for seed in range(drops):
        d = _region_drop(100 + seed)
        chans = sample_channels(d, 100, 30)
        se = {}
        for pol in ("uc", "nct"):
            st = form_clusters(d, pol, "best_channel", 30)
            se[pol] = evaluate_policy(d, chans, st, PA, 30, 200).se.mean()
        wins += se["uc"] >= se["nct"]
    assert wins / drops > 0.8
