"""Closed-loop Monte Carlo campaigns and reference-trajectory extraction."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import policy as pol
from .astro import MissionConfig, NondimMission, StateVector
from .env import (
    EVAL_TOLERANCE,
    ConstraintReport,
    TransferEnv,
    constraint_errors,
    max_dv,
    reward,
    squash_action,
    terminal_maneuver,
    trace_rows,
    write_trace_csv,
)
from .errors import EmptyCampaign, ParseError
from .uncertainty import UncertaintyConfig, derive_stream

EPISODE_COLUMNS = ["episode", "m_f_kg", "dr_rel_permille", "dv_rel_permille", "J", "success", "mte_steps"]
SWEEP_COLUMNS = ["k_hat", "constraint_violation", "pos_err", "vel_err", "m_f_kg"]
SCHEDULE_COLUMNS = ["k", "dv_x_kms", "dv_y_kms", "dv_z_kms"]


@dataclass
class EpisodeRecord:
    seed: tuple[int, int, int] | None
    states: np.ndarray  # (N+1, 7): r, v, m at every node before the arrival impulse
    commands: np.ndarray  # (N, 3)
    controls: np.ndarray  # (N, 3)
    terminal_dv: np.ndarray
    final_state: np.ndarray  # (7,)
    rewards: np.ndarray  # (N,)
    m_f: float
    pos_err: float
    vel_err: float
    J: float
    J_discounted: float
    epsilon: float
    mte: list[int] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.pos_err, self.vel_err)

    def trace(self, mission: NondimMission) -> list[list[float]]:
        states = [StateVector(s[0:3], s[3:6], s[6], k) for k, s in enumerate(self.states)]
        return trace_rows(mission, states, list(self.commands), list(self.controls), list(self.rewards), self.terminal_dv)


@dataclass
class CampaignSummary:
    n_episodes: int
    epsilon: float
    n_success: int
    success_rate: float
    m_f_mean: float
    m_f_std: float
    pos_err_mean: float
    pos_err_std: float
    vel_err_mean: float
    vel_err_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def _nondim(mission) -> NondimMission:
    if isinstance(mission, NondimMission):
        return mission
    return NondimMission.from_config(mission or MissionConfig())


def deterministic_action(params: pol.PolicyParams, obs: np.ndarray, mission) -> np.ndarray:
    """Mode of the policy distribution mapped onto the impulse cube; no sampling."""
    mean, _ = pol.forward(params, obs)
    return squash_action(mean, max_dv(obs[6], _nondim(mission)))


def _record(env: TransferEnv, seed, gamma: float = 0.9999) -> EpisodeRecord:
    states = np.array([np.concatenate([s.r, s.v, [s.m]]) for s in env.states])
    fs = env.final_state
    rewards = np.array(env.rewards)
    return EpisodeRecord(
        seed=seed,
        states=states,
        commands=np.array(env.commands),
        controls=np.array(env.controls),
        terminal_dv=env.terminal_dv.copy(),
        final_state=np.concatenate([fs.r, fs.v, [fs.m]]),
        rewards=rewards,
        m_f=env.report.m_f,
        pos_err=env.report.pos_err,
        vel_err=env.report.vel_err,
        J=float(sum(env.rewards)),
        J_discounted=float(np.sum(rewards * gamma ** np.arange(len(rewards)))),
        epsilon=env.epsilon,
        mte=sorted(env.blocked),
    )


def run_episode(params, env: TransferEnv, stream=None, stochastic: bool = False, mte_start: int | None = None) -> EpisodeRecord:
    obs = env.reset(stream, mte_start=mte_start)
    policy_rng = env.stream.child("policy") if stochastic else None
    log_std = params["log_std"]
    while not env.done:
        mean, _ = pol.forward(params, obs)
        if policy_rng is not None:
            mean = mean + np.exp(log_std) * policy_rng.normal(len(mean))
        obs = env.step(env.command_from_raw(mean)).obs
    return _record(env, env.stream.key if stream is not None else None)


def extract_reference_trajectory(params: pol.PolicyParams, mission=None, epsilon: float = EVAL_TOLERANCE) -> EpisodeRecord:
    env = TransferEnv(_nondim(mission), UncertaintyConfig(mode="unp"), epsilon=epsilon)
    return run_episode(params, env)


def replay_schedule(commands, mission=None, epsilon: float = EVAL_TOLERANCE) -> EpisodeRecord:
    """Fly an open-loop impulse schedule (nondimensional) in the unperturbed environment.

    Schedules shorter than N are padded with zero impulses. Impulses above the
    segment bound are applied as given and show up as control violations.
    """
    nd = _nondim(mission)
    commands = np.zeros((0, 3)) if len(commands) == 0 else np.asarray(commands, dtype=float).reshape(-1, 3)
    if len(commands) > nd.N:
        raise ValueError(f"schedule has {len(commands)} impulses, at most N={nd.N} allowed")
    env = TransferEnv(nd, UncertaintyConfig(mode="unp"), epsilon=epsilon)
    env.reset()
    for k in range(nd.N):
        env.step(commands[k] if k < len(commands) else np.zeros(3))
    return _record(env, None)


def read_schedule_csv(path, mission=None) -> np.ndarray:
    """Load an impulse schedule in km/s and return it nondimensionalized, ordered by k.

    Segments missing from the file get a zero impulse.
    """
    nd = _nondim(mission)
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SCHEDULE_COLUMNS:
        raise ParseError(f"{path}: expected header {','.join(SCHEDULE_COLUMNS)}")
    out = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            k = int(row[0])
            dv = [float(x) for x in row[1:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}:{line}: {exc}") from None
        if len(dv) != 3 or not all(math.isfinite(x) for x in dv):
            raise ParseError(f"{path}:{line}: need three finite impulse components")
        if not 0 <= k < nd.N or k in out:
            raise ParseError(f"{path}:{line}: segment index {k} out of range or repeated")
        out[k] = dv
    commands = np.zeros((max(out) + 1 if out else 0, 3))
    for k, dv in out.items():
        commands[k] = dv
    return commands / nd.scales.v_ref


def recompute_return(record: EpisodeRecord, mission=None) -> float:
    """Rebuild the episode return from the stored states and controls alone."""
    nd = _nondim(mission)
    total = 0.0
    N = len(record.controls)
    for k in range(N):
        m_prev = record.states[k, 6]
        bound = max_dv(m_prev, nd)
        if k == N - 1:
            last = StateVector(record.states[N, 0:3], record.states[N, 3:6], record.states[N, 6], N)
            _, final = terminal_maneuver(last, nd)
            pos_err, vel_err = constraint_errors(final, nd)
            report = ConstraintReport(pos_err, vel_err, final.m * nd.scales.m_ref)
            total += reward(m_prev, final.m, record.controls[k], bound, report, record.epsilon)
        else:
            total += reward(m_prev, record.states[k + 1, 6], record.controls[k], bound)
    return total


def _campaign_chunk(args):
    params_json, nd_config, unc, indices, global_seed, stochastic, epsilon = args
    params = pol.params_from_json(params_json)
    env = TransferEnv(NondimMission.from_config(nd_config), unc, epsilon=epsilon)
    return [(i, run_episode(params, env, derive_stream(global_seed, 0, i), stochastic)) for i in indices]


def run_campaign(
    params: pol.PolicyParams,
    uncertainty: UncertaintyConfig | str,
    n_episodes: int = 500,
    global_seed: int = 0,
    mission=None,
    stochastic: bool = False,
    epsilon: float = EVAL_TOLERANCE,
    workers: int = 1,
) -> list[EpisodeRecord]:
    """Run the policy in ``n_episodes`` independent realizations of an environment.

    Episode i always uses the streams derived from ``(global_seed, 0, i)``, so
    results are identical for any worker count.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if isinstance(uncertainty, str):
        uncertainty = UncertaintyConfig(mode=uncertainty)
    nd = _nondim(mission)
    if workers <= 1:
        env = TransferEnv(nd, uncertainty, epsilon=epsilon)
        return [run_episode(params, env, derive_stream(global_seed, 0, i), stochastic) for i in range(n_episodes)]
    chunks = [list(range(w, n_episodes, workers)) for w in range(workers)]
    blob = pol.params_to_json(params)
    jobs = [(blob, nd.config, uncertainty, c, global_seed, stochastic, epsilon) for c in chunks if c]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = [item for chunk in pool.map(_campaign_chunk, jobs) for item in chunk]
    return [rec for _, rec in sorted(results, key=lambda item: item[0])]


def closed_loop_returns(params, mission, uncertainty, n_episodes: int, seed: int) -> list[float]:
    return [r.J for r in run_campaign(params, uncertainty, n_episodes, seed, mission)]


def summarize(records: list[EpisodeRecord], epsilon: float = EVAL_TOLERANCE) -> CampaignSummary:
    if not records:
        raise EmptyCampaign("cannot summarize an empty campaign")
    m_f = np.array([r.m_f for r in records])
    pos = np.array([r.pos_err for r in records])
    vel = np.array([r.vel_err for r in records])
    n_success = int(sum(1 for r in records if r.max_error <= epsilon))
    return CampaignSummary(
        n_episodes=len(records),
        epsilon=epsilon,
        n_success=n_success,
        success_rate=100.0 * n_success / len(records),
        m_f_mean=float(m_f.mean()),
        m_f_std=float(m_f.std()),
        pos_err_mean=float(pos.mean()),
        pos_err_std=float(pos.std()),
        vel_err_mean=float(vel.mean()),
        vel_err_std=float(vel.std()),
    )


def mte_sweep(params: pol.PolicyParams, mission=None, k_hats=None, epsilon: float = EVAL_TOLERANCE) -> list[list[float]]:
    """Final constraint violation and mass for a single forced MTE at each node k_hat."""
    nd = _nondim(mission)
    if k_hats is None:
        k_hats = range(nd.N)
    env = TransferEnv(nd, UncertaintyConfig(mode="unp"), epsilon=epsilon)
    rows = []
    for k_hat in k_hats:
        if not 0 <= k_hat < nd.N:
            raise ValueError(f"k_hat must lie in [0, {nd.N}), got {k_hat}")
        rec = run_episode(params, env, mte_start=int(k_hat))
        rows.append([int(k_hat), rec.max_error, rec.pos_err, rec.vel_err, rec.m_f])
    return rows


def _fmt(x) -> str:
    return repr(float(x))


def write_episodes_csv(path, records: list[EpisodeRecord], epsilon: float = EVAL_TOLERANCE) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for i, r in enumerate(records):
            w.writerow(
                [i, _fmt(r.m_f), _fmt(1e3 * r.pos_err), _fmt(1e3 * r.vel_err), _fmt(r.J),
                 int(r.max_error <= epsilon), " ".join(map(str, r.mte))]
            )


def write_summary_json(path, summary: CampaignSummary, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = summary.to_dict()
    doc["table"] = {
        "m_f_kg": {"mean": summary.m_f_mean, "std": summary.m_f_std},
        "dr_rel_permille": {"mean": 1e3 * summary.pos_err_mean, "std": 1e3 * summary.pos_err_std},
        "dv_rel_permille": {"mean": 1e3 * summary.vel_err_mean, "std": 1e3 * summary.vel_err_std},
        "SR_percent": summary.success_rate,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_sweep_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [_fmt(x) for x in row[1:]])


def report_dict(record: EpisodeRecord) -> dict:
    """Reference-trajectory summary in the robust-trajectory table layout."""
    return {
        "m_f_kg": record.m_f,
        "dr_rel_permille": 1e3 * record.pos_err,
        "dv_rel_permille": 1e3 * record.vel_err,
        "pos_err": record.pos_err,
        "vel_err": record.vel_err,
        "J": record.J,
        "J_discounted": record.J_discounted,
        "epsilon": record.epsilon,
    }


def write_reference(run_dir, record: EpisodeRecord, mission) -> None:
    run_dir = Path(run_dir)
    write_trace_csv(run_dir / "reference_trajectory.csv", record.trace(_nondim(mission)))
    (run_dir / "report.json").write_text(json.dumps(report_dict(record), indent=2, sort_keys=True) + "\n")
