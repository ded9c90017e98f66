"""Proximal policy optimization for the rendezvous environment.

Training alternates two phases: a rollout of ``n_env * n_b`` complete
episodes with the current stochastic policy, then ``n_opt`` epochs of
minibatch ascent on the clipped surrogate objective. Only data from the
latest rollout is ever used.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import policy as pol
from .astro import MissionConfig, NondimMission
from .env import EVAL_TOLERANCE, TransferEnv, tolerance_schedule
from .errors import ConfigError, LengthMismatch, StaleBuffer
from .uncertainty import RngStream, UncertaintyConfig, derive_stream

log = logging.getLogger(__name__)

CLIP_FLOOR = 1e-6


@dataclass(frozen=True)
class HyperParams:
    gamma: float = 0.9999
    lam: float = 0.99
    alpha0: float = 2.5e-4
    clip0: float = 0.3
    c1: float = 0.5
    c2: float = 4.75e-8
    n_opt: int = 30
    n_env: int = 8
    n_b: int = 4
    T: int = 300_000
    minibatch_size: int | None = None  # defaults to n_env * N
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    value_target: str = "lambda"  # or "rewards_to_go"
    eval_episodes: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError("gamma and lambda must lie in (0, 1]")
        if not 0 < self.clip0 < 1:
            raise ConfigError("clip0 must lie in (0, 1)")
        if self.n_opt < 0 or self.n_env < 1 or self.n_b < 1 or self.T < 1:
            raise ConfigError("n_opt >= 0, n_env >= 1, n_b >= 1 and T >= 1 are required")
        if self.value_target not in ("lambda", "rewards_to_go"):
            raise ConfigError(f"unknown value_target {self.value_target!r}")


def schedules(t: float, T: float, hp: HyperParams) -> tuple[float, float]:
    """Linearly decayed learning rate and clip range at training step t."""
    frac = 1.0 - t / T
    return hp.alpha0 * frac, max(hp.clip0 * frac, CLIP_FLOOR)


def compute_gae(rewards, values, dones, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and lambda-return targets.

    ``values`` has one more entry than ``rewards``: the bootstrap value after
    the last step. ``dones[k]`` marks that the episode ends after step k, in
    which case nothing flows back across the boundary.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if len(values) != n + 1 or len(dones) != n:
        raise LengthMismatch(f"got {n} rewards, {len(values)} values, {len(dones)} dones")
    adv = np.zeros(n)
    running = 0.0
    for k in reversed(range(n)):
        live = 0.0 if dones[k] else 1.0
        delta = rewards[k] + gamma * values[k + 1] * live - values[k]
        running = delta + gamma * lam * live * running
        adv[k] = running
    return adv, adv + values[:n]


def rewards_to_go(rewards, dones) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    running = 0.0
    for k in reversed(range(len(rewards))):
        if dones[k]:
            running = 0.0
        running += rewards[k]
        out[k] = running
    return out


def probability_ratio(log_prob_new, log_prob_old):
    return np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_prob_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    log_prob_old: np.ndarray
    value_old: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episodes: list[dict] = field(default_factory=list)
    consumed: bool = False

    def __len__(self):
        return len(self.rewards)

    def batch(self, idx=None) -> Batch:
        if idx is None:
            idx = slice(None)
        return Batch(self.obs[idx], self.actions[idx], self.log_prob_old[idx], self.advantages[idx], self.returns[idx])


def ppo_objective(batch: Batch, params: pol.PolicyParams, clip_eps: float, c1: float, c2: float):
    """Evaluate the combined PPO objective and its gradient on one minibatch.

    Returns ``(objective, grad, terms)`` where ``grad`` is the ascent direction
    (gradient of the objective, not of its negation) and ``terms`` holds the
    individual surrogate, value-error and entropy values.
    """
    B = len(batch.advantages)
    mean, value, cache = pol.forward_with_cache(params, batch.obs)
    log_std = params["log_std"]
    inv_var = np.exp(-2.0 * log_std)
    diff = batch.actions - mean
    logp = pol.log_prob(mean, log_std, batch.actions)
    ratio = probability_ratio(logp, batch.log_prob_old)
    adv = batch.advantages

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    j_clip = float(np.mean(np.minimum(unclipped, clipped)))
    # gradient flows only where the unclipped branch is the active minimum
    active = unclipped <= clipped
    d_logp = np.where(active, unclipped, 0.0) / B

    err = value - batch.returns
    h = float(np.mean(0.5 * err * err))
    s = pol.entropy(log_std)
    objective = j_clip - c1 * h + c2 * s

    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) + c2
    d_value = -c1 * err / B
    grad = pol.backward(params, cache, d_mean, d_value, d_log_std)
    terms = {
        "clip": j_clip,
        "value": h,
        "entropy": s,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "ratio_max_dev": float(np.max(np.abs(ratio - 1.0))),
    }
    return objective, grad, terms


class Adam:
    """Adaptive-moment ascent over a PolicyParams container, with global norm clipping."""

    def __init__(self, params: pol.PolicyParams, beta1=0.9, beta2=0.999, eps=1e-8, max_grad_norm=0.5):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def ascend(self, params: pol.PolicyParams, grad: pol.PolicyParams, lr: float) -> float:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grad.arrays.values()))
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.arrays.items():
            g = grad.arrays[name] * scale
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p += lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
        return norm


def episode_stream(seed: int, env_index: int, episode_index: int) -> RngStream:
    return derive_stream(seed, env_index, episode_index)


def collect_rollouts(
    params: pol.PolicyParams,
    envs: list[TransferEnv],
    n_b: int,
    seed: int,
    episode_offset: int = 0,
    hp: HyperParams | None = None,
) -> RolloutBuffer:
    """Run ``n_b`` episodes in each environment with the stochastic policy.

    Environments advance in lockstep so one batched forward pass serves all of
    them; every episode draws from its own (seed, env, episode) streams, so the
    buffer does not depend on how the work is scheduled.
    """
    hp = hp or HyperParams()
    n_env = len(envs)
    N = envs[0].N
    total = n_env * n_b * N
    obs_buf = np.zeros((total, params.spec.input_dim))
    act_buf = np.zeros((total, params.spec.policy_out))
    logp_buf = np.zeros(total)
    val_buf = np.zeros(total)
    rew_buf = np.zeros(total)
    done_buf = np.zeros(total, dtype=bool)
    episodes = []
    log_std = params["log_std"]

    for j in range(n_b):
        episode = episode_offset + j
        streams = [episode_stream(seed, i, episode) for i in range(n_env)]
        policy_rngs = [s.child("policy") for s in streams]
        obs = np.stack([env.reset(s) for env, s in zip(envs, streams)])
        base = [(j * n_env + i) * N for i in range(n_env)]
        for k in range(N):
            mean, value = pol.forward(params, obs)
            raw = np.empty_like(mean)
            for i in range(n_env):
                raw[i] = mean[i] + np.exp(log_std) * policy_rngs[i].normal(mean.shape[1])
            logp = pol.log_prob(mean, log_std, raw)
            next_obs = np.empty_like(obs)
            for i, env in enumerate(envs):
                row = base[i] + k
                obs_buf[row] = obs[i]
                act_buf[row] = raw[i]
                logp_buf[row] = logp[i]
                val_buf[row] = value[i]
                res = env.step(env.command_from_raw(raw[i]))
                rew_buf[row] = res.reward
                done_buf[row] = res.done
                next_obs[i] = res.obs
            obs = next_obs
        for i, env in enumerate(envs):
            rews = rew_buf[base[i]:base[i] + N]
            episodes.append(
                {
                    "env": i,
                    "episode": episode,
                    "return": float(np.sum(rews)),
                    "return_discounted": float(np.sum(rews * hp.gamma ** np.arange(N))),
                    "m_f": env.report.m_f,
                    "pos_err": env.report.pos_err,
                    "vel_err": env.report.vel_err,
                }
            )

    values_ext = np.append(val_buf, 0.0)
    adv, ret = compute_gae(rew_buf, values_ext, done_buf, hp.gamma, hp.lam)
    if hp.value_target == "rewards_to_go":
        ret = rewards_to_go(rew_buf, done_buf)
    return RolloutBuffer(obs_buf, act_buf, logp_buf, val_buf, rew_buf, done_buf, adv, ret, episodes)


def normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def update(
    buffer: RolloutBuffer,
    params: pol.PolicyParams,
    hp: HyperParams,
    t: float,
    optimizer: Adam | None = None,
    stream: RngStream | None = None,
    minibatch_size: int | None = None,
):
    """Run n_opt epochs of minibatch ascent; returns (new params, metrics dict)."""
    if buffer.consumed:
        raise StaleBuffer("rollout buffer was already used for an update")
    buffer.consumed = True
    params = params.copy()
    if optimizer is None:
        optimizer = Adam(params, hp.adam_beta1, hp.adam_beta2, hp.adam_eps, hp.max_grad_norm)
    if stream is None:
        stream = derive_stream(0, 0, 0).child("shuffle")
    alpha, clip_eps = schedules(t, hp.T, hp)
    n = len(buffer)
    size = minibatch_size or hp.minibatch_size or n // hp.n_b
    advantages = normalize(buffer.advantages) if hp.normalize_advantages else buffer.advantages
    data = Batch(buffer.obs, buffer.actions, buffer.log_prob_old, advantages, buffer.returns)

    sums = {"objective": 0.0, "clip": 0.0, "value": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "grad_norm": 0.0}
    count = 0
    first_ratio_dev = None
    for _ in range(hp.n_opt):
        order = stream.generator.permutation(n)
        for start in range(0, n, size):
            idx = order[start:start + size]
            mb = Batch(data.obs[idx], data.actions[idx], data.log_prob_old[idx], data.advantages[idx], data.returns[idx])
            objective, grad, terms = ppo_objective(mb, params, clip_eps, hp.c1, hp.c2)
            if first_ratio_dev is None:
                first_ratio_dev = terms["ratio_max_dev"]
            sums["grad_norm"] += optimizer.ascend(params, grad, alpha)
            sums["objective"] += objective
            for key in ("clip", "value", "entropy", "clip_fraction"):
                sums[key] += terms[key]
            count += 1

    metrics = {"alpha": alpha, "clip_eps": clip_eps, "n_minibatches": count}
    for key, total in sums.items():
        metrics[key] = total / count if count else float("nan")
    metrics["first_ratio_dev"] = first_ratio_dev if first_ratio_dev is not None else 0.0
    return params, metrics


@dataclass
class TrainResult:
    params: pol.PolicyParams
    best_params: pol.PolicyParams
    best_eval: float
    metrics: list[dict]


def _mean(records, key):
    return float(np.mean([r[key] for r in records]))


def train(
    mission: MissionConfig | None = None,
    uncertainty: UncertaintyConfig | None = None,
    hp: HyperParams | None = None,
    seed: int = 0,
    network: pol.NetworkSpec | None = None,
    run_dir=None,
    init: pol.PolicyParams | None = None,
) -> TrainResult:
    """Alternate rollouts and updates until ``hp.T`` environment steps are consumed.

    The policy with the best deterministic reference-trajectory return (at the
    final 1e-3 tolerance) is kept as the best checkpoint. When ``run_dir`` is
    given, metrics are appended there as JSON lines and checkpoints written
    under ``checkpoints/``.
    """
    from .evaluate import closed_loop_returns, extract_reference_trajectory

    mission = mission or MissionConfig()
    uncertainty = uncertainty or UncertaintyConfig()
    hp = hp or HyperParams()
    network = network or pol.NetworkSpec()
    nd = NondimMission.from_config(mission)
    root = RngStream(seed, 0, 0)
    params = init.copy() if init is not None else pol.init_params(network, root.child("init").generator)
    optimizer = Adam(params, hp.adam_beta1, hp.adam_beta2, hp.adam_eps, hp.max_grad_norm)
    envs = [TransferEnv(nd, uncertainty) for _ in range(hp.n_env)]
    steps_per_rollout = hp.n_env * hp.n_b * nd.N
    minibatch = hp.minibatch_size or hp.n_env * nd.N

    metrics_file = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        metrics_file = (run_dir / "metrics.jsonl").open("w")

    t = 0
    update_index = 0
    best_eval = -math.inf
    best_params = params.copy()
    records = []
    try:
        while t < hp.T:
            tol = tolerance_schedule(t, hp.T)
            for env in envs:
                env.epsilon = tol
            buffer = collect_rollouts(params, envs, hp.n_b, seed, episode_offset=update_index * hp.n_b, hp=hp)
            params, upd = update(buffer, params, hp, t, optimizer, root.child("shuffle", update_index), minibatch)
            t += steps_per_rollout

            ref = extract_reference_trajectory(params, nd, epsilon=EVAL_TOLERANCE)
            eval_return = ref.J
            if hp.eval_episodes > 0 and uncertainty.mode != "unp":
                eval_return = float(np.mean(closed_loop_returns(params, nd, uncertainty, hp.eval_episodes, seed)))
            improved = eval_return > best_eval
            if improved:
                best_eval = eval_return
                best_params = params.copy()

            eps = buffer.episodes
            record = {
                "update": update_index,
                "t": t,
                "tolerance": tol,
                "mean_return": _mean(eps, "return"),
                "mean_return_discounted": _mean(eps, "return_discounted"),
                "mean_m_f": _mean(eps, "m_f"),
                "mean_pos_err": _mean(eps, "pos_err"),
                "mean_vel_err": _mean(eps, "vel_err"),
                **upd,
                "eval_return": eval_return,
                "eval_pos_err": ref.pos_err,
                "eval_vel_err": ref.vel_err,
                "eval_m_f": ref.m_f,
                "best": improved,
            }
            records.append(record)
            log.info(
                "update %d t=%d return=%.4f eval=%.4f pos_err=%.3e m_f=%.2f",
                update_index, t, record["mean_return"], eval_return, ref.pos_err, ref.m_f,
            )
            if metrics_file is not None:
                metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_file.flush()
                if improved:
                    pol.save_params(best_params, run_dir / "checkpoints" / "best.json")
            update_index += 1
    finally:
        if metrics_file is not None:
            metrics_file.close()

    if run_dir is not None:
        pol.save_params(params, run_dir / "checkpoints" / "final.json")
        pol.save_params(best_params, run_dir / "checkpoints" / "best.json")
    return TrainResult(params=params, best_params=best_params, best_eval=best_eval, metrics=records)


def hyperparams_dict(hp: HyperParams) -> dict:
    return asdict(hp)
