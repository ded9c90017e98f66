"""Run configuration: one JSON document with mission, uncertainty, hyper and network sections."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .astro import MissionConfig
from .errors import ConfigError, ParseError
from .policy import NetworkSpec
from .ppo import HyperParams
from .uncertainty import UncertaintyConfig

SECTIONS = {
    "mission": MissionConfig,
    "uncertainty": UncertaintyConfig,
    "hyper": HyperParams,
    "network": NetworkSpec,
}


@dataclass(frozen=True)
class RunConfig:
    mission: MissionConfig = field(default_factory=MissionConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    hyper: HyperParams = field(default_factory=HyperParams)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        doc = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        doc["seed"] = self.seed
        doc["output_dir"] = self.output_dir
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _build_section(name: str, cls, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown field(s) in {name!r}: {', '.join(unknown)}")
    # JSON has no tuples; vector-valued fields arrive as lists
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig; every missing field keeps its default."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed", "output_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _build_section(name, cls, doc[name]) for name, cls in SECTIONS.items() if name in doc}
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        kwargs["seed"] = doc["seed"]
    if "output_dir" in doc:
        kwargs["output_dir"] = str(doc["output_dir"])
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def write_config(path, config: RunConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_json())
