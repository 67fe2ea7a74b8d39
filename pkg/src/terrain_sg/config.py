"""Run configuration: one TOML file with a table per pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli

from terrain_sg.errors import ConfigError
from terrain_sg.fusion import FusionConfig
from terrain_sg.places import PlacesConfig
from terrain_sg.planner import TerrainPolicy
from terrain_sg.query import QueryConfig
from terrain_sg.regions import RegionConfig

_SECTIONS = {
    "fusion": FusionConfig,
    "places": PlacesConfig,
    "regions": RegionConfig,
    "query": QueryConfig,
}


@dataclass(frozen=True)
class RunConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    places: PlacesConfig = field(default_factory=PlacesConfig)
    regions: RegionConfig = field(default_factory=RegionConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    policy: dict = field(default_factory=dict)

    def terrain_policy(self, terrain_names: dict[int, str] | None = None) -> TerrainPolicy:
        return TerrainPolicy.from_dict(self.policy, terrain_names)

    def with_query(self, **overrides) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        try:
            return replace(self, query=replace(self.query, **clean))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _section(cls, values: dict, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _check_policy(policy) -> None:
    # Terrain names resolve later against the graph; check shape and values now.
    if not isinstance(policy, dict):
        raise ConfigError("[policy] must be a table")
    unknown = set(policy) - {"multiplier", "prohibited"}
    if unknown:
        raise ConfigError(f"unknown keys in [policy]: {sorted(unknown)}")
    for t, m in dict(policy.get("multiplier", {})).items():
        if not isinstance(m, (int, float)) or not m >= 1:
            raise ConfigError(f"terrain multiplier for {t!r} must be >= 1")
    if not isinstance(policy.get("prohibited", []), list):
        raise ConfigError("policy.prohibited must be a list")


def parse_config(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS) - {"policy"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {name: _section(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    policy = data.get("policy", {})
    _check_policy(policy)
    return RunConfig(**parts, policy=policy)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(Path(path), "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(data)
