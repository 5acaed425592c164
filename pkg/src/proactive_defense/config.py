"""Scenario configuration and its plain-text ``key = value`` file format.

A scenario file is a sequence of lines of the form::

    # comment
    scenario = syn_flood
    seed = 7
    initial_replicas = 5
    attack_intensity = 2000

Blank lines and ``#`` comments are ignored. Keys are the field names of
:class:`ScenarioConfig`; values are coerced to the field's type (ints,
floats, booleans as ``true/false``, optional numbers as ``none``). Unknown
keys are a :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

SCENARIOS = ("syn_flood", "slow_http", "memory_dos")

DIMENSIONS = ("security", "recovery_time", "resource", "financial_cost", "qos")

DEFAULT_INTENSITY = {"syn_flood": 2000.0, "slow_http": 400.0, "memory_dos": 80.0}


class ConfigError(ValueError):
    """Raised for invalid scenario or run configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "syn_flood"
    seed: int = 0
    attack_enabled: bool = True

    # elastic service
    max_replicas: int = 10
    pod_pool: int = 100
    initial_replicas: int = 5
    pods_per_replica: int = 10
    conns_per_pod: int = 256
    mem_cap: float = 100.0

    # co-resident VM cluster
    racks: int = 5
    machines_per_rack: int = 10
    vms_per_machine: int = 10
    contention_cap: float = 100.0
    runtime_cap: float = 100.0
    bystanders_min: int = 2
    bystanders_max: int = 6

    # clock
    step_seconds: int = 30
    steps_per_round: int = 4
    warmup_steps: int = 4
    stable_rounds: int = 5

    # traffic and outcome thresholds
    legit_demand: int = 1000
    legit_clients: int = 20
    legit_jitter: float = 0.05
    syn_hold: int = 8
    survive_threshold: float = 0.95
    compromise_threshold: float = 0.5
    memory_secure_gain: float = 0.5

    # attacker profile
    attack_sources: int = 2
    attack_intensity: Optional[float] = None
    adaptation_delay: int = 3

    @property
    def intensity(self) -> float:
        if self.attack_intensity is not None:
            return float(self.attack_intensity)
        return DEFAULT_INTENSITY[self.scenario]

    @property
    def machines(self) -> int:
        return self.racks * self.machines_per_rack

    def replace(self, **changes: Any) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        positive = (
            "max_replicas", "pod_pool", "pods_per_replica", "conns_per_pod", "racks",
            "machines_per_rack", "vms_per_machine", "step_seconds", "steps_per_round",
            "stable_rounds", "syn_hold", "legit_clients",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 1 <= self.initial_replicas <= self.max_replicas:
            raise ConfigError(
                f"initial_replicas={self.initial_replicas} outside 1..{self.max_replicas}"
            )
        if self.initial_replicas * self.pods_per_replica > self.pod_pool:
            raise ConfigError(
                f"{self.initial_replicas} replicas x {self.pods_per_replica} pods exceeds pod pool {self.pod_pool}"
            )
        if self.warmup_steps < 0 or self.legit_demand < 0 or self.adaptation_delay < 0:
            raise ConfigError("warmup_steps, legit_demand and adaptation_delay must be >= 0")
        if not 0 <= self.bystanders_min <= self.bystanders_max <= self.vms_per_machine - 3:
            # victim + two co-resident attackers must fit beside the bystanders
            raise ConfigError("bystander range must leave room for victim and attackers")
        if not 0.0 < self.compromise_threshold <= self.survive_threshold <= 1.0:
            raise ConfigError("need 0 < compromise_threshold <= survive_threshold <= 1")
        if not 0.0 <= self.legit_jitter < 1.0:
            raise ConfigError("legit_jitter must be in [0, 1)")
        if self.attack_sources < 1:
            raise ConfigError("attack_sources must be >= 1")
        if self.attack_intensity is not None and self.attack_intensity < 0:
            raise ConfigError("attack_intensity must be >= 0")


def _coerce(raw: str, target: Any, key: str) -> Any:
    text = raw.strip()
    if target in (bool, "bool"):
        lowered = text.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target in ("Optional[float]",):
        if text.lower() in ("none", "null", ""):
            return None
        target = "float"
    try:
        if target in (int, "int"):
            return int(text)
        if target in (float, "float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return text


def parse_config(text: str, **overrides: Any) -> ScenarioConfig:
    """Parse the key-value scenario format. ``overrides`` win over file values."""
    types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(value, types[key], key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ScenarioConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path, **overrides: Any) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def dump_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = str(value).lower()
        elif value is None:
            value = "none"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Weights:
    """Importance weights over the five evaluation dimensions."""

    security: float = 0.2
    recovery_time: float = 0.2
    resource: float = 0.2
    financial_cost: float = 0.2
    qos: float = 0.2

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSIONS}

    def validate(self, tol: float = 1e-9) -> None:
        values = self.as_dict()
        if any(v < 0 for v in values.values()):
            raise ConfigError(f"weights must be non-negative: {values}")
        total = sum(values.values())
        if abs(total - 1.0) > tol:
            raise ConfigError(f"weights must sum to 1, got {total}")
