"""Time-discrete Earth-Mars rendezvous environment.

The transfer is split into N ballistic arcs joined by bounded impulses. The
agent commands an impulse at each of the N nodes; the arrival impulse that
matches Mars velocity is computed algebraically at the last node.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .astro import DAY_S, MissionConfig, NondimMission, StateVector, kepler_propagate, tsiolkovsky_mass
from .errors import EpisodeFinished
from .uncertainty import (
    RngStream,
    UncertaintyConfig,
    control_execution,
    derive_stream,
    mte_schedule,
    sample_obs_noise,
    sample_state_noise,
)

LAMBDA_CONTROL = 100.0
LAMBDA_STATE = 50.0
EVAL_TOLERANCE = 1e-3

TRACE_COLUMNS = [
    "k", "t_days",
    "r_x_km", "r_y_km", "r_z_km",
    "v_x_kms", "v_y_kms", "v_z_kms",
    "m_kg",
    "dv_cmd_x_kms", "dv_cmd_y_kms", "dv_cmd_z_kms",
    "dv_real_x_kms", "dv_real_y_kms", "dv_real_z_kms",
    "reward",
]


@dataclass
class ConstraintReport:
    pos_err: float
    vel_err: float
    m_f: float  # kg
    dv_violations: list[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.pos_err, self.vel_err)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict


def max_dv(m_k: float, mission: NondimMission) -> float:
    """Largest impulse the engine can accumulate over one segment at full thrust."""
    return mission.thrust / m_k * mission.dt


def squash_action(raw: np.ndarray, dv_bound: float) -> np.ndarray:
    """Map an unbounded network output componentwise onto the cube [-dv_bound, dv_bound]^3."""
    return dv_bound * np.tanh(raw)


def control_violation(u: np.ndarray, dv_bound: float) -> float:
    return max(0.0, math.sqrt(float(u @ u)) - dv_bound)


def terminal_violation(report: ConstraintReport, epsilon: float) -> float:
    return max(0.0, report.max_error - epsilon)


def reward(
    m_prev: float,
    m_next: float,
    u_prev: np.ndarray,
    dv_bound_prev: float,
    report: ConstraintReport | None = None,
    epsilon: float = EVAL_TOLERANCE,
) -> float:
    """Reward collected on arriving at a node.

    ``m_next`` is the final mass (after the arrival impulse) when ``report`` is
    given, i.e. on the last transition; the terminal penalty is only added then.
    """
    mu = m_prev - m_next
    e_u = control_violation(u_prev, dv_bound_prev)
    e_s = terminal_violation(report, epsilon) if report is not None else 0.0
    return -mu - LAMBDA_CONTROL * e_u - LAMBDA_STATE * e_s


def tolerance_schedule(t: float, T: float) -> float:
    return 0.01 if t < T / 2 else 0.001


def terminal_maneuver(state: StateVector, mission: NondimMission) -> tuple[np.ndarray, StateVector]:
    """Arrival impulse toward Mars velocity, saturated at the segment bound."""
    mismatch = mission.v_mars - state.v
    gap = math.sqrt(float(mismatch @ mismatch))
    if gap == 0.0:
        return np.zeros(3), state.copy()
    bound = max_dv(state.m, mission)
    if gap <= bound:
        dv = mismatch.copy()
        v_f = mission.v_mars.copy()
    else:
        dv = bound * mismatch / gap
        v_f = state.v + dv
    m_f = tsiolkovsky_mass(state.m, math.sqrt(float(dv @ dv)), mission.u_eq)
    return dv, StateVector(state.r.copy(), v_f, m_f, state.k)


def constraint_errors(final: StateVector, mission: NondimMission) -> tuple[float, float]:
    dr = final.r - mission.r_mars
    dv = final.v - mission.v_mars
    pos_err = math.sqrt(float(dr @ dr)) / math.sqrt(float(mission.r_mars @ mission.r_mars))
    vel_err = math.sqrt(float(dv @ dv)) / math.sqrt(float(mission.v_mars @ mission.v_mars))
    return pos_err, vel_err


class TransferEnv:
    """One realization of the rendezvous MDP.

    ``step`` takes the commanded impulse in nondimensional units. Policies that
    emit unbounded outputs go through :meth:`command_from_raw` first.
    """

    def __init__(
        self,
        mission: MissionConfig | NondimMission | None = None,
        uncertainty: UncertaintyConfig | None = None,
        epsilon: float = EVAL_TOLERANCE,
    ):
        if mission is None:
            mission = MissionConfig()
        if isinstance(mission, MissionConfig):
            mission = NondimMission.from_config(mission)
        self.mission = mission
        self.uncertainty = uncertainty or UncertaintyConfig()
        self.epsilon = epsilon
        sc = mission.scales
        self._sigma_r = self.uncertainty.sigma_r / sc.r_ref
        self._sigma_v = self.uncertainty.sigma_v / sc.v_ref
        self.state: StateVector | None = None
        self.done = True

    @property
    def N(self) -> int:
        return self.mission.N

    @property
    def k(self) -> int:
        return self.state.k

    @property
    def t(self) -> float:
        return self.state.k * self.mission.dt

    def reset(self, stream: RngStream | None = None, mte_start: int | None = None) -> np.ndarray:
        """Start an episode at Earth with zero hyperbolic excess.

        ``mte_start`` forces a single one-step missed-thrust event at that node,
        regardless of mode; it is used for sweeps over the event location.
        """
        m = self.mission
        if stream is None:
            stream = derive_stream(0, 0, 0)
        self.stream = stream
        unc = self.uncertainty
        self._state_rng = stream.child("state") if unc.state_noise else None
        self._obs_rng = stream.child("obs") if unc.obs_noise else None
        self._ctrl_rng = stream.child("ctrl") if unc.control_noise else None
        if mte_start is not None:
            if not 0 <= mte_start < m.N:
                raise ValueError(f"MTE location must lie in [0, {m.N}), got {mte_start}")
            self.blocked = frozenset({int(mte_start)})
        elif unc.mte:
            self.blocked = mte_schedule(
                stream.child("mte"), m.N, unc.p_mte, unc.effective_n_mte,
                force_one=unc.force_one_mte, recurrence=unc.mte_recurrence,
            )
        else:
            self.blocked = frozenset()

        self.state = StateVector(m.r_earth.copy(), m.v_earth.copy(), m.m0, 0)
        self.done = False
        self.states = [self.state.copy()]
        self.commands: list[np.ndarray] = []
        self.controls: list[np.ndarray] = []
        self.bounds: list[float] = []
        self.rewards: list[float] = []
        self.report: ConstraintReport | None = None
        self.final_state: StateVector | None = None
        self.terminal_dv: np.ndarray | None = None
        return self._observe()

    def _observe(self) -> np.ndarray:
        s = self.state
        obs = np.empty(8)
        obs[0:3] = s.r
        obs[3:6] = s.v
        obs[6] = s.m
        obs[7] = self.t
        if self._obs_rng is not None:
            dr, dv = sample_obs_noise(self._obs_rng, self._sigma_r, self._sigma_v)
            obs[0:3] += dr
            obs[3:6] += dv
        return obs

    def dv_bound(self) -> float:
        return max_dv(self.state.m, self.mission)

    def command_from_raw(self, raw: np.ndarray) -> np.ndarray:
        return squash_action(np.asarray(raw, dtype=float), self.dv_bound())

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinished("step() called on a finished episode; call reset()")
        m = self.mission
        s = self.state
        a = np.array(action, dtype=float).reshape(3)
        bound = self.dv_bound()

        if self._ctrl_rng is not None:
            u = control_execution(a, self._ctrl_rng, self.uncertainty)
        else:
            u = a.copy()
        if s.k in self.blocked:
            u = np.zeros(3)

        r1, v1 = kepler_propagate(s.r, s.v + u, m.dt, m.mu)
        if self._state_rng is not None:
            dr, dv = sample_state_noise(self._state_rng, self._sigma_r, self._sigma_v)
            r1 = r1 + dr
            v1 = v1 + dv
        m1 = tsiolkovsky_mass(s.m, math.sqrt(float(u @ u)), m.u_eq)
        self.state = StateVector(r1, v1, m1, s.k + 1)

        self.commands.append(a)
        self.controls.append(u)
        self.bounds.append(bound)
        self.states.append(self.state.copy())

        info = {"u": u, "command": a, "dv_bound": bound, "m_prev": s.m, "blocked": s.k in self.blocked}
        report = None
        m_next = m1
        if self.state.k == m.N:
            dv_n, final = terminal_maneuver(self.state, m)
            pos_err, vel_err = constraint_errors(final, m)
            report = ConstraintReport(
                pos_err=pos_err,
                vel_err=vel_err,
                m_f=final.m * m.scales.m_ref,
                dv_violations=[control_violation(uu, bb) for uu, bb in zip(self.controls, self.bounds)],
            )
            self.report = report
            self.final_state = final
            self.terminal_dv = dv_n
            self.done = True
            m_next = final.m
            info["terminal_dv"] = dv_n
            info["final_state"] = final.copy()
            info["report"] = report

        r = reward(s.m, m_next, u, bound, report, self.epsilon)
        self.rewards.append(r)
        info["mu"] = s.m - m_next
        info["e_u"] = control_violation(u, bound)
        info["e_s"] = terminal_violation(report, self.epsilon) if report is not None else 0.0
        info["m_next"] = m_next
        info["epsilon"] = self.epsilon
        info["state"] = self.state.copy()
        obs = self._observe()
        return StepResult(obs=obs, reward=r, done=self.done, info=info)

    def trace_rows(self) -> list[list[float]]:
        """One row per node in physical units; row N carries the arrival impulse."""
        return trace_rows(self.mission, self.states, self.commands, self.controls, self.rewards, self.terminal_dv)


def reward_from_info(info: dict) -> float:
    return reward(info["m_prev"], info["m_next"], info["u"], info["dv_bound"], info.get("report"), info["epsilon"])


def trace_rows(mission, states, commands, controls, rewards, terminal_dv) -> list[list[float]]:
    sc = mission.scales
    rows = []
    n_nodes = len(states)
    for k, s in enumerate(states):
        if k < len(commands):
            cmd, real = commands[k], controls[k]
        elif terminal_dv is not None:
            cmd = real = terminal_dv
        else:
            cmd = real = np.zeros(3)
        rew = rewards[k - 1] if 0 < k <= len(rewards) else 0.0
        rows.append(
            [k, k * mission.dt * sc.t_ref / DAY_S]
            + list(s.r * sc.r_ref)
            + list(s.v * sc.v_ref)
            + [s.m * sc.m_ref]
            + list(np.asarray(cmd) * sc.v_ref)
            + list(np.asarray(real) * sc.v_ref)
            + [rew]
        )
    assert len(rows) == n_nodes
    return rows


def write_trace_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
