"""Round-level RL view of the simulator: fixed observation vector and discrete action set."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import ScenarioConfig
from ..env import (VICTIM, EnvState, InvariantViolation, RoundLabel, Termination, advance_step, check_termination,
                   init_env, label_round)
from ..pipeline import MAX_ROUNDS, ground_truth

ACTIONS = (
    "noop",
    "block_top_offender",
    "rate_limit_top_offender",
    "recycle",
    "scale_up",
    "scale_down",
    "shuffle",
    "migrate_victim",
    "throttle_top_contender",
    "isolate_top_contender",
)
OBS_DIM = 6
RATE_LIMIT = 50
SCALE_STEP = 2
THROTTLE_CAP = 2.0
POOL_PENALTY = 0.1


@dataclass
class RoundResult:
    obs: np.ndarray
    reward: float
    done: bool
    label: str
    survived: list = field(default_factory=list)
    verdict: Optional[str] = None
    truncated: bool = False


def _top_offender(env: EnvState) -> Optional[str]:
    live = [(a, s) for s, a in env.last_attempts.items() if s not in env.service.blocked_sources and a > 0]
    if not live:
        live = [(0, s) for s in env.profile.sources if s not in env.service.blocked_sources]
    return max(live)[1] if live else None


def _top_contender(env: EnvState) -> Optional[str]:
    cl = env.cluster
    cands = [(vm.contention_emitted, vm.vm_id) for vm in cl.vms.values()
             if vm.role == "attacker" and not vm.isolated and vm.throttle_cap is None]
    return max(cands)[1] if cands else None


def apply_action(env: EnvState, action: int) -> bool:
    """Apply a discrete action; inapplicable or cap-breaking actions are no-ops. Returns True if applied."""
    name = ACTIONS[action]
    flooding = env.profile.flooding
    try:
        if name == "block_top_offender" and flooding:
            src = _top_offender(env)
            if src:
                env.block(src)
                return True
        elif name == "rate_limit_top_offender" and flooding:
            src = _top_offender(env)
            if src:
                env.rate_limit(src, RATE_LIMIT)
                return True
        elif name == "recycle":
            env.recycle(0)
            return True
        elif name == "scale_up":
            env.scale_to(env.service.active_replicas + SCALE_STEP)
            return True
        elif name == "scale_down":
            env.scale_to(env.service.active_replicas - SCALE_STEP)
            return True
        elif name == "shuffle":
            env.shuffle_address()
            return True
        elif name == "migrate_victim" and VICTIM in env.cluster.vms:
            cl = env.cluster
            host = cl.vms[VICTIM].host
            options = [(cl.machine_load(m), m) for m in range(cl.machines)
                       if m != host and cl.machine_load(m) < cl.vms_per_machine_cap]
            if options:
                env.migrate_vm(VICTIM, min(options)[1])
                return True
        elif name == "throttle_top_contender":
            vm = _top_contender(env)
            if vm:
                env.throttle_vm(vm, THROTTLE_CAP)
                return True
        elif name == "isolate_top_contender":
            vm = next((v.vm_id for v in sorted(env.cluster.vms.values(), key=lambda v: -v.contention_emitted)
                       if v.role == "attacker" and not v.isolated), None)
            if vm:
                env.isolate_vm(vm)
                return True
    except InvariantViolation:
        return False
    return False


class DefenseEnv:
    """One RL step = one defense round (action, then ``steps_per_round`` simulator steps)."""

    n_actions = len(ACTIONS)
    obs_dim = OBS_DIM

    def __init__(self, cfg: ScenarioConfig, max_rounds: int = MAX_ROUNDS):
        self.cfg = cfg
        self.max_rounds = max_rounds
        self.env: Optional[EnvState] = None

    def reset(self, episode: int) -> np.ndarray:
        self.env = init_env(self.cfg, episode)
        self.labels: list[RoundLabel] = []
        self.outcomes = [advance_step(self.env)[1] for _ in range(self.cfg.warmup_steps)]
        return self.observe()

    def observe(self) -> np.ndarray:
        env, cfg = self.env, self.cfg
        cap = env.capacity
        last = self.outcomes[-1] if self.outcomes else None
        if env.profile.flooding:
            sent = sum(env.last_attempts.values())
            admitted = sum(min(a, env.service.rate_limits.get(s, a)) for s, a in env.last_attempts.items()
                           if s not in env.service.blocked_sources)
            contention = admitted / sent if sent else 0.0
        else:
            contention = min(1.0, env.co_resident_contention() / 100.0)
        risk, _ = ground_truth(cfg, env, self.outcomes, len(self.labels) + 1 if cfg.attack_enabled else 0)
        return np.array([
            last.availability if last else 1.0,
            env.free_slots() / cap,
            env.hostile_occupancy() / cap,
            env.service.active_replicas / cfg.max_replicas,
            contention,
            risk / 10.0,
        ])

    def step(self, action: int) -> RoundResult:
        env, cfg = self.env, self.cfg
        hostile_start = env.hostile_occupancy()
        apply_action(env, action)
        self.outcomes = [advance_step(env)[1] for _ in range(cfg.steps_per_round)]
        label = label_round(cfg, self.outcomes, hostile_start)
        self.labels.append(label)
        survived = [o.survived for o in self.outcomes]
        reward = sum(survived) - POOL_PENALTY * env.service.active_pods / cfg.pod_pool
        t = check_termination(self.labels, cfg.stable_rounds)
        verdict, truncated = None, False
        if t is Termination.SECURE_END:
            verdict = "success"
        elif t is Termination.COMPROMISED_END:
            verdict = "failure"
        elif len(self.labels) >= self.max_rounds:
            verdict, truncated = "failure", True
        return RoundResult(self.observe(), float(reward), verdict is not None, label.value, survived, verdict,
                           truncated)
