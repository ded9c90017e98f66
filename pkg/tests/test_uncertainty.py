import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from helios.astro import MissionConfig, NondimMission
from helios.env import TransferEnv
from helios.errors import ConfigError
from helios.uncertainty import (
    RngStream,
    UncertaintyConfig,
    control_execution,
    derive_stream,
    mte_duration,
    mte_schedule,
    sample_control_disturbance,
    sample_obs_noise,
    sample_state_noise,
    small_angle_rotation,
)

ND = NondimMission.from_config(MissionConfig())


def test_defaults_match_parameter_table():
    cfg = UncertaintyConfig()
    assert (cfg.sigma_r, cfg.sigma_v) == (1.0, 0.05)
    assert (cfg.sigma_phi, cfg.sigma_theta, cfg.sigma_psi) == (1.0, 1.0, 1.0)
    assert (cfg.sigma_u, cfg.p_mte, cfg.n_mte) == (0.05, 0.1, 3)
    assert cfg.force_one_mte


@pytest.mark.parametrize("kwargs", [{"mode": "foo"}, {"sigma_r": -1.0}, {"p_mte": 1.0}, {"n_mte": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        UncertaintyConfig(**kwargs)


def test_zero_sigma_noise_is_zero():
    dr, dv = sample_state_noise(RngStream(0, 0, 0), 0.0, 0.0)
    assert np.all(dr == 0) and np.all(dv == 0)


def test_state_noise_moments():
    n = 1_000_000
    dr, dv = sample_state_noise(RngStream(1, 0, 0), 1.0, 0.05, size=n)
    assert np.all(np.abs(dr.mean(axis=0)) < 3 * 1.0 / math.sqrt(n))
    np.testing.assert_allclose(dr.std(axis=0), 1.0, rtol=0.01)
    np.testing.assert_allclose(dv.std(axis=0), 0.05, rtol=0.01)
    cov = np.cov(np.hstack([dr, dv]).T)
    expected = np.diag([1.0] * 3 + [0.05**2] * 3)
    np.testing.assert_allclose(np.diag(cov), np.diag(expected), rtol=0.01)


def test_small_angle_rotation():
    np.testing.assert_array_equal(small_angle_rotation(0, 0, 0), np.eye(3))
    np.testing.assert_array_equal(
        small_angle_rotation(0, 0, 0.01), [[1, -0.01, 0], [0.01, 1, 0], [0, 0, 1]]
    )


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_rotation_minus_identity_is_antisymmetric(a, b, c):
    d = small_angle_rotation(a, b, c) - np.eye(3)
    np.testing.assert_array_equal(d, -d.T)


def test_control_execution_limits():
    a = np.array([0.01, -0.02, 0.005])
    zero = UncertaintyConfig(sigma_phi=0, sigma_theta=0, sigma_psi=0, sigma_u=0, mode="ctr")
    np.testing.assert_array_equal(control_execution(a, RngStream(0, 0, 0), zero), a)
    np.testing.assert_array_equal(control_execution(np.zeros(3), RngStream(0, 0, 0), UncertaintyConfig()), 0.0)


def test_control_execution_preserves_mean_magnitude():
    stream = RngStream(2, 0, 0)
    a = np.array([0.01, -0.02, 0.005])
    ratios = [np.linalg.norm(control_execution(a, stream, UncertaintyConfig())) / np.linalg.norm(a) for _ in range(100_000)]
    assert np.mean(ratios) == pytest.approx(1.0, rel=0.005)


def test_control_disturbance_sigmas():
    dphi, dtheta, dpsi, du = sample_control_disturbance(RngStream(3, 0, 0), UncertaintyConfig(), size=1_000_000)
    for x in (dphi, dtheta, dpsi):
        assert x.std() == pytest.approx(math.radians(1.0), rel=0.01)
    assert du.std() == pytest.approx(0.05, rel=0.01)


def test_mte_duration_law_enumerated():
    # Enumerated truncated-geometric outcomes for p = 0.1, cap 3.
    p = 0.1
    law = {1: 1 - p, 2: p * (1 - p), 3: p * p}
    assert law == pytest.approx({1: 0.9, 2: 0.09, 3: 0.01})
    assert sum(k * v for k, v in law.items()) == pytest.approx(1.11)

    stream = RngStream(4, 0, 0)
    n = 100_000
    counts = Counter(mte_duration(stream, p, 3) for _ in range(n))
    assert max(counts) <= 3
    observed = [counts[k] for k in (1, 2, 3)]
    _, pvalue = chisquare(observed, [n * law[k] for k in (1, 2, 3)])
    assert pvalue > 0.001


def test_mte_schedule_properties():
    for i in range(500):
        blocked = mte_schedule(derive_stream(5, 0, i), 40, 0.0, 3)
        assert len(blocked) == 1
    for i in range(2000):
        blocked = sorted(mte_schedule(derive_stream(6, 0, i), 40, 0.9, 3))
        assert 1 <= len(blocked) <= 3
        assert blocked == list(range(blocked[0], blocked[0] + len(blocked)))
        assert 0 <= blocked[0] and blocked[-1] < 40


def test_mte_schedule_without_forcing_can_be_empty():
    sizes = [len(mte_schedule(derive_stream(7, 0, i), 40, 0.1, 3, force_one=False)) for i in range(2000)]
    assert 0 in sizes and any(sizes)


def test_mte_recurrence_allows_several_events():
    runs = [sorted(mte_schedule(derive_stream(8, 0, i), 40, 0.5, 3, recurrence=True)) for i in range(500)]
    gaps = [any(b - a > 1 for a, b in zip(r, r[1:])) for r in runs]
    assert any(gaps)


def test_blocked_step_zeroes_thrust():
    env = TransferEnv(ND, UncertaintyConfig(mode="unp"))
    env.reset(mte_start=3)
    for k in range(ND.N):
        res = env.step(np.full(3, 0.005))
        if k == 3:
            assert np.all(res.info["u"] == 0.0)
            assert res.info["m_next"] == res.info["m_prev"]
        else:
            assert np.all(res.info["u"] == 0.005)


def test_mte1_mode_is_single_step():
    env = TransferEnv(ND, UncertaintyConfig(mode="mte1", p_mte=0.9))
    for i in range(200):
        env.reset(derive_stream(9, 0, i))
        assert len(env.blocked) == 1


def test_streams_reproducible_and_independent():
    a = derive_stream(42, 0, 0).normal(10_000)
    b = derive_stream(42, 0, 0).normal(10_000)
    c = derive_stream(42, 1, 0).normal(10_000)
    d = derive_stream(42, 0, 1).normal(10_000)
    np.testing.assert_array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.02
    assert abs(np.corrcoef(a, d)[0, 1]) < 0.02


def test_obs_noise_shares_state_covariance():
    assert sample_obs_noise is sample_state_noise


def _fly(mode, seed=0):
    env = TransferEnv(ND, UncertaintyConfig(mode=mode))
    env.reset(derive_stream(seed, 0, 0))
    rng = np.random.default_rng(0)
    for _ in range(ND.N):
        env.step(env.command_from_raw(rng.standard_normal(3)))
    return env


def test_observation_noise_leaves_dynamics_untouched():
    clean, noisy = _fly("unp"), _fly("obs")
    for a, b in zip(clean.states, noisy.states):
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.v, b.v)
        assert a.m == b.m


def test_disabled_uncertainty_is_bitwise_identity():
    a = _fly("unp", seed=1)
    b = _fly("unp", seed=2)
    env = TransferEnv(ND)
    env.reset()
    rng = np.random.default_rng(0)
    for _ in range(ND.N):
        env.step(env.command_from_raw(rng.standard_normal(3)))
    for x, y, z in zip(a.states, b.states, env.states):
        np.testing.assert_array_equal(x.r, y.r)
        np.testing.assert_array_equal(x.r, z.r)
    assert a.rewards == b.rewards == env.rewards


def test_state_noise_perturbs_position_and_velocity_only():
    clean, noisy = _fly("unp"), _fly("st")
    assert not np.array_equal(clean.states[1].r, noisy.states[1].r)
    # the first segment's mass depends only on the commanded impulse
    assert clean.states[1].m == noisy.states[1].m
