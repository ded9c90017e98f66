"""Robust low-thrust Earth-Mars transfer design with reinforcement learning."""

from .astro import MissionConfig, NondimMission, kepler_propagate
from .config import RunConfig, load_config
from .env import TransferEnv
from .evaluate import extract_reference_trajectory, run_campaign, summarize
from .policy import NetworkSpec, PolicyParams, load_params, save_params
from .ppo import HyperParams, train
from .uncertainty import UncertaintyConfig

__version__ = "0.1.0"

__all__ = [
    "HyperParams",
    "MissionConfig",
    "NetworkSpec",
    "NondimMission",
    "PolicyParams",
    "RunConfig",
    "TransferEnv",
    "UncertaintyConfig",
    "extract_reference_trajectory",
    "kepler_propagate",
    "load_config",
    "load_params",
    "run_campaign",
    "save_params",
    "summarize",
    "train",
]
