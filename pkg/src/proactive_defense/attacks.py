"""Load generators for the three DoS profiles and the legitimate client mix."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .config import ConfigError, ScenarioConfig

if TYPE_CHECKING:
    from .env import EnvState, ServiceState

FLOOD_KINDS = ("syn_flood", "slow_http")

# documentation address ranges; never collide with the legit 10.0.0.0/8 pool
ATTACKER_IPS = ("203.0.113.10", "198.51.100.23", "192.0.2.77", "203.0.113.54")


@dataclass(frozen=True)
class AttackProfile:
    kind: str
    sources: tuple[str, ...]
    intensity: float
    adaptation_delay: int = 3

    @property
    def flooding(self) -> bool:
        return self.kind in FLOOD_KINDS


@dataclass
class AttackLoad:
    """One step of attacker output.

    ``attempts`` is what each source sends (SYNs, slow connections, or
    requested memory contention); ``contribution`` is what survives the
    firewall, throttles and adaptation windows.
    """

    kind: str
    attempts: dict[str, float] = field(default_factory=dict)
    contribution: dict[str, float] = field(default_factory=dict)

    def dropped(self, source: str) -> float:
        return self.attempts.get(source, 0) - self.contribution.get(source, 0)

    def total(self) -> float:
        return sum(self.contribution.values())


@dataclass
class LegitLoad:
    demand: dict[str, int] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.demand.values())


@dataclass
class Inbound:
    attack: AttackLoad
    legit: LegitLoad


def default_profile(cfg: ScenarioConfig) -> AttackProfile:
    if cfg.scenario == "memory_dos":
        sources = tuple(f"vm-atk-{i}" for i in range(cfg.attack_sources))
    else:
        if cfg.attack_sources > len(ATTACKER_IPS):
            raise ConfigError(f"at most {len(ATTACKER_IPS)} flooding sources are supported")
        sources = ATTACKER_IPS[: cfg.attack_sources]
    return AttackProfile(cfg.scenario, sources, cfg.intensity, cfg.adaptation_delay)


def legit_clients(cfg: ScenarioConfig) -> tuple[str, ...]:
    return tuple(f"10.0.{1 + i // 250}.{1 + i % 250}" for i in range(cfg.legit_clients))


def firewall_admit(service: "ServiceState", source: str, attempts: float) -> float:
    """Connection attempts from ``source`` that pass block and rate-limit rules."""
    if source in service.blocked_sources:
        return 0
    limit = service.rate_limits.get(source)
    if limit is not None:
        return min(attempts, limit)
    return attempts


def emit_load(profile: AttackProfile, env: "EnvState", step: int) -> AttackLoad:
    cfg = env.config
    if profile.kind != cfg.scenario:
        raise ConfigError(f"profile kind {profile.kind!r} does not match scenario {cfg.scenario!r}")
    load = AttackLoad(profile.kind)
    for src in profile.sources:
        if not cfg.attack_enabled:
            load.attempts[src] = 0
            load.contribution[src] = 0
            continue
        adapting = step <= env.attack_state.get(src, 0)
        if profile.flooding:
            sent = 0 if adapting else int(profile.intensity)
            load.attempts[src] = sent
            load.contribution[src] = firewall_admit(env.service, src, sent)
        else:
            vm = env.cluster.vms[src]
            demand = min(float(profile.intensity), cfg.contention_cap)
            effective = demand
            if vm.throttle_cap is not None:
                effective = min(effective, vm.throttle_cap)
            if vm.isolated or adapting:
                effective = 0.0
            load.attempts[src] = demand
            load.contribution[src] = effective
    return load


def legit_load(env: "EnvState", step: int) -> LegitLoad:
    cfg = env.config
    rng = random.Random(f"legit:{cfg.seed}:{env.clock.episode}:{step}")
    total = cfg.legit_demand * (1.0 + cfg.legit_jitter * (2.0 * rng.random() - 1.0))
    total = int(round(total))
    clients = legit_clients(cfg)
    share, extra = divmod(total, len(clients))
    return LegitLoad({ip: share + (1 if i < extra else 0) for i, ip in enumerate(clients)})


def next_inbound(env: "EnvState") -> Inbound:
    step = env.clock.step + 1
    return Inbound(emit_load(env.profile, env, step), legit_load(env, step))
