"""Stochastic perturbation models and reproducible random streams.

Every random draw in the package goes through an :class:`RngStream`. Streams
are keyed by ``(global_seed, env_index, episode_index, channel)`` and backed by
the Philox counter-based generator, so any episode can be regenerated in
isolation and the order in which episodes run never matters.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

MODES = ("unp", "st", "obs", "ctr", "mte1", "mte2")

# Sub-stream tags; each perturbation model draws from its own child stream.
_TAGS = {"state": 1, "obs": 2, "ctrl": 3, "mte": 4, "policy": 5, "shuffle": 6, "init": 7}


@dataclass(frozen=True)
class UncertaintyConfig:
    sigma_r: float = 1.0  # km
    sigma_v: float = 0.05  # km/s
    sigma_phi: float = 1.0  # deg
    sigma_theta: float = 1.0  # deg
    sigma_psi: float = 1.0  # deg
    sigma_u: float = 0.05
    p_mte: float = 0.1
    n_mte: int = 3
    mode: str = "unp"
    force_one_mte: bool = True
    mte_recurrence: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        for name in ("sigma_r", "sigma_v", "sigma_phi", "sigma_theta", "sigma_psi", "sigma_u"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if not 0.0 <= self.p_mte < 1.0:
            raise ConfigError(f"p_mte must lie in [0, 1), got {self.p_mte}")
        if int(self.n_mte) != self.n_mte or self.n_mte < 1:
            raise ConfigError(f"n_mte must be an integer >= 1, got {self.n_mte}")

    @property
    def state_noise(self) -> bool:
        return self.mode == "st"

    @property
    def obs_noise(self) -> bool:
        return self.mode == "obs"

    @property
    def control_noise(self) -> bool:
        return self.mode == "ctr"

    @property
    def mte(self) -> bool:
        return self.mode in ("mte1", "mte2")

    @property
    def effective_n_mte(self) -> int:
        return 1 if self.mode == "mte1" else int(self.n_mte)

    def with_mode(self, mode: str) -> "UncertaintyConfig":
        return UncertaintyConfig(**{**asdict(self), "mode": mode})


class RngStream:
    """A reproducible random source bound to one (seed, env, episode) triple."""

    def __init__(self, global_seed: int, env_index: int, episode_index: int, channel: tuple[int, ...] = ()):
        self.global_seed = int(global_seed)
        self.env_index = int(env_index)
        self.episode_index = int(episode_index)
        self.channel = tuple(int(c) for c in channel)
        seq = np.random.SeedSequence(
            entropy=self.global_seed,
            spawn_key=(self.env_index, self.episode_index) + self.channel,
        )
        self.generator = np.random.Generator(np.random.Philox(seq))

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.global_seed, self.env_index, self.episode_index)

    def child(self, tag: str, *index: int) -> "RngStream":
        return RngStream(self.global_seed, self.env_index, self.episode_index, self.channel + (_TAGS[tag], *index))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def integers(self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))

    def __repr__(self):
        return f"RngStream(seed={self.global_seed}, env={self.env_index}, episode={self.episode_index}, channel={self.channel})"


def derive_stream(global_seed: int, env_index: int, episode_index: int) -> RngStream:
    return RngStream(global_seed, env_index, episode_index)


def sample_state_noise(stream: RngStream, sigma_r: float, sigma_v: float, size: int | None = None):
    """Draw additive position and velocity noise, in whatever units the sigmas use.

    Mass is never perturbed, so only the six kinematic components are returned.
    With ``size`` set, returns arrays of shape (size, 3).
    """
    z = stream.normal(6 if size is None else (size, 6))
    return sigma_r * z[..., :3], sigma_v * z[..., 3:]


# Observation noise shares the state-noise covariance.
sample_obs_noise = sample_state_noise


def small_angle_rotation(dphi: float, dtheta: float, dpsi: float) -> np.ndarray:
    return np.array(
        [
            [1.0, -dpsi, dtheta],
            [dpsi, 1.0, -dphi],
            [-dtheta, dphi, 1.0],
        ]
    )


def sample_control_disturbance(stream: RngStream, cfg: UncertaintyConfig, size: int | None = None):
    """Return (dphi, dtheta, dpsi, du) with the angles in radians."""
    z = stream.normal(4 if size is None else (size, 4))
    return (
        math.radians(cfg.sigma_phi) * z[..., 0],
        math.radians(cfg.sigma_theta) * z[..., 1],
        math.radians(cfg.sigma_psi) * z[..., 2],
        cfg.sigma_u * z[..., 3],
    )


def control_execution(a: np.ndarray, stream: RngStream, cfg: UncertaintyConfig) -> np.ndarray:
    """Apply a random small rotation and magnitude error to a commanded impulse."""
    dphi, dtheta, dpsi, du = sample_control_disturbance(stream, cfg)
    return (1.0 + du) * (small_angle_rotation(dphi, dtheta, dpsi) @ np.asarray(a, dtype=float))


def mte_duration(stream: RngStream, p_mte: float, n_mte: int) -> int:
    """Length of one missed-thrust event: persists with probability p_mte, capped at n_mte."""
    duration = 1
    while duration < n_mte and stream.uniform() < p_mte:
        duration += 1
    return duration


def mte_schedule(
    stream: RngStream,
    N: int,
    p_mte: float,
    n_mte: int,
    force_one: bool = True,
    recurrence: bool = False,
) -> frozenset[int]:
    """Return the set of step indices at which thrust is lost.

    When ``force_one`` is False an event starts at all only with probability
    ``p_mte``. With ``recurrence`` set, every step after a recovery may start a
    fresh event with probability ``p_mte``; otherwise the first recovery is final.
    """
    if N <= n_mte:
        raise ValueError(f"N ({N}) must exceed n_mte ({n_mte})")
    if not force_one and stream.uniform() >= p_mte:
        return frozenset()
    start = stream.integers(0, N)
    blocked = set()
    while True:
        duration = mte_duration(stream, p_mte, n_mte)
        blocked.update(k for k in range(start, start + duration) if k < N)
        if not recurrence:
            break
        k = start + duration + 1
        while k < N and stream.uniform() >= p_mte:
            k += 1
        if k >= N:
            break
        start = k
    return frozenset(blocked)
