import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from helios import policy as pol
from helios.astro import MissionConfig, NondimMission
from helios.errors import EmptyCampaign, ParseError
from helios.evaluate import (
    EPISODE_COLUMNS,
    SWEEP_COLUMNS,
    EpisodeRecord,
    deterministic_action,
    extract_reference_trajectory,
    read_schedule_csv,
    mte_sweep,
    recompute_return,
    replay_schedule,
    run_campaign,
    summarize,
    write_episodes_csv,
    write_summary_json,
    write_sweep_csv,
)

DATA = Path(__file__).parent / "data"
ND = NondimMission.from_config(MissionConfig())
SMALL = pol.NetworkSpec(hidden=(8, 8))
# Relative miss of a ballistic coast from Earth, from a DOP853 reference (see test_env).
COAST_MISS = 0.8670821871664004


def fake(pos, vel, m_f=600.0):
    z = np.zeros((0, 3))
    return EpisodeRecord(None, np.zeros((1, 7)), z, z, np.zeros(3), np.zeros(7), np.zeros(0), m_f, pos, vel, 0.0, 0.0, 1e-3)


def zero_policy():
    p = pol.init_params(SMALL, np.random.default_rng(0))
    for arr in p.arrays.values():
        arr[...] = 0.0
    return p


@pytest.fixture(scope="module")
def random_policy():
    p = pol.init_params(SMALL, np.random.default_rng(3))
    for arr in p.arrays.values():
        arr += 0.5 * np.random.default_rng(4).standard_normal(arr.shape)
    return p


def test_summarize_half_success():
    s = summarize([fake(5e-4, 1e-4), fake(2e-3, 1e-4)])
    assert s.n_success == 1 and s.success_rate == 50.0


def test_summarize_all_success_and_empty():
    assert summarize([fake(1e-4, 1e-4)] * 3).success_rate == 100.0
    with pytest.raises(EmptyCampaign):
        summarize([])


def test_summarize_hand_built_statistics():
    recs = [fake(1e-3, 2e-3, 600.0), fake(3e-3, 0.0, 610.0), fake(0.0, 4e-3, 590.0), fake(4e-3, 2e-3, 600.0)]
    s = summarize(recs)
    # m_f: mean 600, deviations 0, 10, -10, 0 -> population variance 50
    assert s.m_f_mean == 600.0
    assert s.m_f_std == pytest.approx(math.sqrt(50.0), rel=1e-15)
    # pos: mean 2e-3, deviations -1, 1, -2, 2 (e-3) -> variance 2.5e-6
    assert s.pos_err_mean == pytest.approx(2e-3, rel=1e-15)
    assert s.pos_err_std == pytest.approx(math.sqrt(2.5e-6), rel=1e-12)
    assert s.vel_err_mean == pytest.approx(2e-3, rel=1e-15)
    assert s.vel_err_std == pytest.approx(math.sqrt(2e-6), rel=1e-12)
    assert s.n_success == 0


def test_summarize_matches_brute_force_recount():
    rng = np.random.default_rng(0)
    recs = [fake(*rng.uniform(0, 5e-3, 2)) for _ in range(300)]
    for eps in [0.0, 1e-4, 1e-3, 2.5e-3, 1.0, *rng.uniform(0, 5e-3, 20)]:
        count = 0
        for r in recs:
            if r.pos_err <= eps and r.vel_err <= eps:
                count += 1
        assert summarize(recs, eps).n_success == count


def test_deterministic_action_is_squashed_mean(random_policy):
    obs = np.concatenate([ND.r_earth, ND.v_earth, [0.9, 0.3]])
    a = deterministic_action(random_policy, obs, ND)
    b = deterministic_action(random_policy, obs, ND)
    np.testing.assert_array_equal(a, b)
    mean, _ = pol.forward(random_policy, obs)
    bound = ND.thrust * ND.dt / 0.9
    np.testing.assert_allclose(a, bound * np.tanh(mean), rtol=1e-15)
    assert np.all(np.abs(a) <= bound)


def test_zero_policy_reference_is_a_coast():
    rec = extract_reference_trajectory(zero_policy(), ND)
    assert np.all(rec.commands == 0.0)
    assert rec.pos_err == pytest.approx(COAST_MISS, rel=1e-9)
    assert rec.states.shape == (ND.N + 1, 7)
    assert len(rec.trace(ND)) == ND.N + 1


def test_recomputed_return_matches(random_policy):
    for mode in ("unp", "ctr", "mte2"):
        for rec in run_campaign(random_policy, mode, 3, global_seed=1):
            assert recompute_return(rec, ND) == rec.J


def test_unperturbed_campaign_has_zero_variance(random_policy):
    recs = run_campaign(random_policy, "unp", 5, global_seed=9)
    for r in recs[1:]:
        np.testing.assert_array_equal(r.states, recs[0].states)
    s = summarize(recs)
    assert s.m_f_std == 0.0 and s.pos_err_std == 0.0 and s.vel_err_std == 0.0


def test_campaign_reproducible_and_worker_independent(random_policy):
    a = run_campaign(random_policy, "st", 6, global_seed=2)
    b = run_campaign(random_policy, "st", 6, global_seed=2, workers=3)
    assert [r.J for r in a] == [r.J for r in b]
    assert summarize(a) == summarize(b)


def test_zero_policy_under_state_noise_fails():
    recs = run_campaign(zero_policy(), "st", 20, global_seed=0)
    s = summarize(recs)
    assert s.success_rate == 0.0
    assert s.pos_err_mean == pytest.approx(COAST_MISS, rel=0.05)


def test_replay_of_reference_schedule(random_policy):
    ref = extract_reference_trajectory(random_policy, ND)
    again = replay_schedule(ref.commands, ND)
    np.testing.assert_array_equal(again.states, ref.states)
    assert again.J == ref.J


def test_replayed_feasible_schedule_succeeds():
    # Fixture: 40 bounded impulses solved offline with scipy least_squares so that
    # the pre-arrival state matches Mars exactly.
    commands = read_schedule_csv(DATA / "feasible_schedule.csv", ND)
    assert commands.shape == (ND.N, 3)
    recs = [replay_schedule(commands, ND) for _ in range(3)]
    s = summarize(recs)
    assert s.success_rate == 100.0
    assert all(v == 0.0 for v in recs[0].terminal_dv) or recs[0].max_error < 1e-12
    # penalty-free, so the return is the propellant fraction
    assert recs[0].J == pytest.approx(-(1.0 - recs[0].m_f / 1000.0), abs=1e-14)


def test_schedule_reader_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    for text in ["a,b\n", "k,dv_x_kms,dv_y_kms,dv_z_kms\n0,1,2\n", "k,dv_x_kms,dv_y_kms,dv_z_kms\n40,0,0,0\n",
                 "k,dv_x_kms,dv_y_kms,dv_z_kms\n0,x,0,0\n", "k,dv_x_kms,dv_y_kms,dv_z_kms\n1,0,0,0\n1,0,0,0\n"]:
        bad.write_text(text)
        with pytest.raises(ParseError):
            read_schedule_csv(bad, ND)
    bad.write_text("k,dv_x_kms,dv_y_kms,dv_z_kms\n")
    assert read_schedule_csv(bad, ND).shape == (0, 3)


def test_replay_pads_and_rejects():
    empty = replay_schedule([], ND)
    assert empty.pos_err == pytest.approx(COAST_MISS, rel=1e-9)
    with pytest.raises(ValueError):
        replay_schedule(np.zeros((ND.N + 1, 3)), ND)


def test_mte_sweep(random_policy):
    rows = mte_sweep(random_policy, ND)
    assert len(rows) == ND.N
    assert [r[0] for r in rows] == list(range(ND.N))
    flat = mte_sweep(zero_policy(), ND, k_hats=[0, 7, 39])
    assert len({tuple(r[1:]) for r in flat}) == 1
    with pytest.raises(ValueError):
        mte_sweep(random_policy, ND, k_hats=[ND.N])


def test_output_files(tmp_path, random_policy):
    recs = run_campaign(random_policy, "mte2", 4, global_seed=0)
    write_episodes_csv(tmp_path / "episodes.csv", recs)
    write_summary_json(tmp_path / "summary.json", summarize(recs))
    write_sweep_csv(tmp_path / "sweep.csv", mte_sweep(random_policy, ND, k_hats=[0, 1]))
    with (tmp_path / "episodes.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == EPISODE_COLUMNS and len(rows) == 5
    assert float(rows[1][2]) == pytest.approx(1e3 * recs[0].pos_err)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["n_episodes"] == 4 and "SR_percent" in doc["table"]
    with (tmp_path / "sweep.csv").open() as fh:
        assert next(csv.reader(fh)) == SWEEP_COLUMNS
