"""Discrete-time kernel for the elastic service and the co-resident VM cluster.

One step is ``step_seconds`` of simulated time. Within a step the kernel:

1. releases last step's legit connections, ages half-open and slow
   cohorts, and expires half-open entries older than ``syn_hold``;
2. admits attack arrivals first, then legit demand, spreading each batch
   evenly across pods with free slots (arrival order is FIFO, and flooders
   are modelled as arriving ahead of clients);
3. relocates co-resident attackers whose adaptation window has passed and
   charges their contention against the victim VM;
4. reports ``availability = min(served / offered, victim progress gain)``
   plus labeled telemetry events for the collector.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

from .attacks import AttackProfile, Inbound, default_profile, firewall_admit, legit_clients, next_inbound
from .config import ConfigError, ScenarioConfig

STAGES = ("collect", "analyze", "decide", "deploy", "feedback")
VICTIM = "vm-victim"
QUARANTINE = -1
EPOCH = datetime(2025, 6, 1, 10, 0, 0, tzinfo=timezone.utc)


class Termination(enum.Enum):
    CONTINUE = "continue"
    SECURE_END = "secure_end"
    COMPROMISED_END = "compromised_end"


class RoundLabel(str, enum.Enum):
    SECURE = "secure"
    COMPROMISED = "compromised"
    CONTESTED = "contested"


class InvariantViolation(RuntimeError):
    pass


@dataclass
class Pod:
    legit_connections: int = 0
    # cohorts of [source_id, age_steps, count]
    half_open: list = field(default_factory=list)
    slow: list = field(default_factory=list)
    memory_util: float = 0.0

    @property
    def hostile_connections(self) -> int:
        return sum(c for _, _, c in self.slow)

    @property
    def half_open_count(self) -> int:
        return sum(c for _, _, c in self.half_open)

    @property
    def total(self) -> int:
        return self.legit_connections + self.hostile_connections + self.half_open_count

    def copy(self) -> "Pod":
        return Pod(
            self.legit_connections,
            [list(c) for c in self.half_open],
            [list(c) for c in self.slow],
            self.memory_util,
        )


@dataclass
class ServiceState:
    active_replicas: int
    pods_per_replica: int
    pods: list[Pod]
    service_address: str = "svc-0"
    address_epoch: int = 0
    blocked_sources: set = field(default_factory=set)
    rate_limits: dict = field(default_factory=dict)
    allowlist: tuple = ()

    @property
    def active_pods(self) -> int:
        return len(self.pods)

    def copy(self) -> "ServiceState":
        return ServiceState(
            self.active_replicas,
            self.pods_per_replica,
            [p.copy() for p in self.pods],
            self.service_address,
            self.address_epoch,
            set(self.blocked_sources),
            dict(self.rate_limits),
            self.allowlist,
        )


@dataclass
class VMRecord:
    vm_id: str
    host: int
    role: str  # victim | attacker | bystander
    contention_emitted: float = 0.0
    progress: float = 0.0
    throttle_cap: Optional[float] = None
    isolated: bool = False


@dataclass
class ClusterState:
    racks: int
    machines_per_rack: int
    vms_per_machine_cap: int
    # anonymous bystander VMs per machine; named VMs live in ``vms``
    bystanders: list[int]
    vms: dict[str, VMRecord]

    @property
    def machines(self) -> int:
        return self.racks * self.machines_per_rack

    def machine_load(self, machine: int) -> int:
        named = sum(1 for vm in self.vms.values() if vm.host == machine)
        return self.bystanders[machine] + named

    def copy(self) -> "ClusterState":
        return ClusterState(
            self.racks,
            self.machines_per_rack,
            self.vms_per_machine_cap,
            list(self.bystanders),
            {k: VMRecord(**vars(v)) for k, v in self.vms.items()},
        )


@dataclass
class Clock:
    step: int = 0
    round: int = 1
    episode: int = 1
    stages: list = field(default_factory=list)

    def record_stage(self, stage: str) -> None:
        expected = STAGES[len(self.stages)]
        if stage != expected:
            raise RuntimeError(f"stage {stage!r} out of order; expected {expected!r}")
        self.stages.append(stage)
        if len(self.stages) == len(STAGES):
            self.stages = []
            self.round += 1

    @property
    def completed_rounds(self) -> int:
        return self.round - 1


@dataclass
class StepOutcome:
    step: int
    availability: float
    survived: bool
    raw_events: list
    offered: int = 0
    served: int = 0
    victim_gain: float = 1.0
    hostile_occupancy: int = 0


@dataclass(frozen=True)
class EnvCaps:
    max_replicas: int
    pod_pool: int
    pods_per_replica: int
    active_replicas: int
    vms_per_machine: int
    machines: int
    machine_loads: tuple
    vm_hosts: dict
    allowlist: tuple
    contention_cap: float
    blocked_sources: frozenset = frozenset()


@dataclass
class EnvState:
    config: ScenarioConfig
    profile: AttackProfile
    service: ServiceState
    cluster: ClusterState
    clock: Clock
    attack_state: dict = field(default_factory=dict)
    terminated: bool = False
    mutations: int = 0
    blocked_at: dict = field(default_factory=dict)
    last_attempts: dict = field(default_factory=dict)

    # -- queries ---------------------------------------------------------
    @property
    def capacity(self) -> int:
        return self.service.active_pods * self.config.conns_per_pod

    def hostile_occupancy(self) -> int:
        return sum(p.hostile_connections + p.half_open_count for p in self.service.pods)

    def free_slots(self) -> int:
        return self.capacity - sum(p.total for p in self.service.pods)

    def caps(self) -> EnvCaps:
        cl = self.cluster
        return EnvCaps(
            max_replicas=self.config.max_replicas,
            pod_pool=self.config.pod_pool,
            pods_per_replica=self.service.pods_per_replica,
            active_replicas=self.service.active_replicas,
            vms_per_machine=cl.vms_per_machine_cap,
            machines=cl.machines,
            machine_loads=tuple(cl.machine_load(m) for m in range(cl.machines)),
            vm_hosts={k: v.host for k, v in cl.vms.items()},
            allowlist=self.service.allowlist,
            contention_cap=self.config.contention_cap,
            blocked_sources=frozenset(self.service.blocked_sources),
        )

    def co_resident_contention(self) -> float:
        victim = self.cluster.vms.get(VICTIM)
        if victim is None:
            return 0.0
        return sum(
            vm.contention_emitted if vm.throttle_cap is None else min(vm.contention_emitted, vm.throttle_cap)
            for vm in self.cluster.vms.values()
            if vm.role == "attacker" and not vm.isolated and vm.host == victim.host
        )

    def check_invariants(self) -> list[str]:
        cfg, svc = self.config, self.service
        problems = []
        if not 1 <= svc.active_replicas <= cfg.max_replicas:
            problems.append(f"active_replicas {svc.active_replicas} outside 1..{cfg.max_replicas}")
        if svc.active_replicas * svc.pods_per_replica > cfg.pod_pool:
            problems.append("pod pool exceeded")
        if len(svc.pods) != svc.active_replicas * svc.pods_per_replica:
            problems.append("pod table out of sync with replica count")
        for i, pod in enumerate(svc.pods):
            if pod.total > cfg.conns_per_pod:
                problems.append(f"pod {i} holds {pod.total} > {cfg.conns_per_pod} connections")
            if pod.memory_util > cfg.mem_cap:
                problems.append(f"pod {i} memory {pod.memory_util} > {cfg.mem_cap}")
            for src, age, _ in pod.half_open + pod.slow:
                arrived = self.clock.step - age
                if src in self.blocked_at and arrived > self.blocked_at[src]:
                    problems.append(f"pod {i} admitted {src} after it was blocked")
        cl = self.cluster
        for m in range(cl.machines):
            if cl.machine_load(m) > cl.vms_per_machine_cap:
                problems.append(f"machine {m} hosts {cl.machine_load(m)} VMs")
        for vm in cl.vms.values():
            if vm.contention_emitted > cfg.contention_cap:
                problems.append(f"{vm.vm_id} contention {vm.contention_emitted} > cap")
            if vm.progress > cfg.runtime_cap:
                problems.append(f"{vm.vm_id} progress beyond runtime cap")
        return problems

    # -- defensive mutations (the deployer's action effects) ---------------
    def _mutated(self) -> None:
        self.mutations += 1

    def scale_to(self, replicas: int) -> None:
        cfg, svc = self.config, self.service
        if not 1 <= replicas <= cfg.max_replicas or replicas * svc.pods_per_replica > cfg.pod_pool:
            raise InvariantViolation(f"cannot scale to {replicas} replicas")
        want = replicas * svc.pods_per_replica
        if want > len(svc.pods):
            svc.pods.extend(Pod() for _ in range(want - len(svc.pods)))
        else:
            del svc.pods[want:]
        svc.active_replicas = replicas
        self._mutated()

    def block(self, source: str) -> None:
        self.service.blocked_sources.add(source)
        self.blocked_at.setdefault(source, self.clock.step)
        self._mutated()

    def rate_limit(self, source: str, per_step: int) -> None:
        self.service.rate_limits[source] = int(per_step)
        self._mutated()

    def recycle(self, min_age: int = 0) -> int:
        """Tear down half-open and long-lived idle connections at least ``min_age`` steps old."""
        freed = 0
        for pod in self.service.pods:
            for attr in ("half_open", "slow"):
                keep = []
                for cohort in getattr(pod, attr):
                    if cohort[1] >= min_age:
                        freed += cohort[2]
                    else:
                        keep.append(cohort)
                setattr(pod, attr, keep)
            pod.memory_util = min(self.config.mem_cap, 100.0 * pod.total / self.config.conns_per_pod)
        self._mutated()
        return freed

    def shuffle_address(self) -> None:
        svc = self.service
        svc.address_epoch += 1
        svc.service_address = f"svc-{svc.address_epoch}"
        until = self.clock.step + self.profile.adaptation_delay
        if self.profile.flooding:
            for src in self.profile.sources:
                self.attack_state[src] = until
        self._mutated()

    def migrate_vm(self, vm_id: str, machine: int) -> None:
        cl = self.cluster
        vm = cl.vms[vm_id]
        if not 0 <= machine < cl.machines or (machine != vm.host and cl.machine_load(machine) >= cl.vms_per_machine_cap):
            raise InvariantViolation(f"machine {machine} cannot take {vm_id}")
        vm.host = machine
        if vm.role == "victim" and not self.profile.flooding:
            until = self.clock.step + self.profile.adaptation_delay
            for src in self.profile.sources:
                if not cl.vms[src].isolated and cl.vms[src].host != machine:
                    self.attack_state[src] = until
        self._mutated()

    def throttle_vm(self, vm_id: str, cap: float) -> None:
        self.cluster.vms[vm_id].throttle_cap = float(cap)
        self._mutated()

    def isolate_vm(self, vm_id: str) -> None:
        vm = self.cluster.vms[vm_id]
        vm.isolated = True
        vm.host = QUARANTINE
        self._mutated()

    def copy(self) -> "EnvState":
        return snapshot(self)


def init_env(cfg: ScenarioConfig, episode: int = 1) -> EnvState:
    cfg.validate()
    profile = default_profile(cfg)
    pods = [Pod() for _ in range(cfg.initial_replicas * cfg.pods_per_replica)]
    service = ServiceState(
        active_replicas=cfg.initial_replicas,
        pods_per_replica=cfg.pods_per_replica,
        pods=pods,
        allowlist=legit_clients(cfg),
    )
    rng = random.Random(f"cluster:{cfg.seed}:{episode}")
    machines = cfg.machines
    bystanders = [rng.randint(cfg.bystanders_min, cfg.bystanders_max) for _ in range(machines)]
    victim_host = rng.randrange(machines)
    vms = {VICTIM: VMRecord(VICTIM, victim_host, "victim")}
    if cfg.scenario == "memory_dos":
        room = cfg.vms_per_machine - bystanders[victim_host] - 1
        if room < len(profile.sources):
            if cfg.vms_per_machine - 1 < len(profile.sources):
                raise ConfigError("too many co-resident attackers for one machine")
            bystanders[victim_host] = cfg.vms_per_machine - 1 - len(profile.sources)
        for src in profile.sources:
            vms[src] = VMRecord(src, victim_host, "attacker")
    cluster = ClusterState(cfg.racks, cfg.machines_per_rack, cfg.vms_per_machine, bystanders, vms)
    return EnvState(cfg, profile, service, cluster, Clock(episode=episode))


def snapshot(env: EnvState) -> EnvState:
    """Independent copy; mutating it never touches ``env``."""
    return EnvState(
        env.config,
        env.profile,
        env.service.copy(),
        env.cluster.copy(),
        Clock(env.clock.step, env.clock.round, env.clock.episode, list(env.clock.stages)),
        dict(env.attack_state),
        env.terminated,
        env.mutations,
        dict(env.blocked_at),
        dict(env.last_attempts),
    )


def _spread(free: Sequence[int], n: int) -> list[int]:
    """Even water-fill of ``n`` arrivals over pods with free slots (low index first on ties)."""
    alloc = [0] * len(free)
    remaining = n
    open_idx = [i for i, f in enumerate(free) if f > 0]
    while remaining > 0 and open_idx:
        share, extra = divmod(remaining, len(open_idx))
        nxt = []
        for j, i in enumerate(open_idx):
            want = share + (1 if j < extra else 0)
            take = min(want, free[i] - alloc[i])
            alloc[i] += take
            remaining -= take
            if free[i] - alloc[i] > 0:
                nxt.append(i)
        open_idx = nxt
    return alloc


def timestamp(step: int, seconds: int = 30) -> str:
    return (EPOCH + timedelta(seconds=seconds * step)).strftime("%Y-%m-%dT%H:%M:%SZ")


def advance_step(env: EnvState, inbound: Optional[Inbound] = None) -> tuple[EnvState, StepOutcome]:
    """Advance ``env`` one step in place and return it with the step's outcome."""
    if env.terminated:
        raise RuntimeError("environment already terminated")
    if inbound is None:
        inbound = next_inbound(env)
    cfg, svc = env.config, env.service
    step = env.clock.step + 1
    ts = timestamp(step, cfg.step_seconds)
    cap = cfg.conns_per_pod

    for pod in svc.pods:
        pod.legit_connections = 0
        if pod.half_open:
            for c in pod.half_open:
                c[1] += 1
            pod.half_open = [c for c in pod.half_open if c[1] < cfg.syn_hold]
        for c in pod.slow:
            c[1] += 1

    events: list[dict] = []
    attack = inbound.attack
    admitted: dict[str, int] = {}
    flooding = env.profile.flooding
    if flooding:
        cohort_attr = "half_open" if attack.kind == "syn_flood" else "slow"
        ok_event, drop_event = (
            ("syn_half_open", "syn_dropped") if attack.kind == "syn_flood" else ("slow_http_conn", "http_dropped")
        )
        for src, sent in attack.attempts.items():
            sent = int(sent)
            if sent <= 0:
                continue
            passed = int(firewall_admit(svc, src, sent))
            free = [cap - p.total for p in svc.pods]
            alloc = _spread(free, passed)
            got = 0
            for pod, k in zip(svc.pods, alloc):
                if k:
                    getattr(pod, cohort_attr).append([src, 0, k])
                    got += k
            admitted[src] = got
            if got:
                events.append({"timestamp": ts, "event": ok_event, "source_ip": src, "repeat": got, "truth": "attack"})
            if sent - got:
                status = "blocked" if src in svc.blocked_sources else (
                    "rate_limited" if src in svc.rate_limits and sent > passed else "refused")
                events.append({"timestamp": ts, "event": drop_event, "source_ip": src, "status": status,
                               "repeat": sent - got, "truth": "attack"})

    offered = inbound.legit.total()
    free = [cap - p.total for p in svc.pods]
    alloc = _spread(free, offered)
    served = 0
    for pod, k in zip(svc.pods, alloc):
        pod.legit_connections += k
        served += k
    left = served
    for ip, want in inbound.legit.demand.items():
        got = min(want, left)
        left -= got
        if got:
            events.append({"timestamp": ts, "event": "http_request", "source_ip": ip, "repeat": got,
                           "truth": "legit"})
        if want - got:
            events.append({"timestamp": ts, "event": "conn_refused", "source_ip": ip, "status": "saturated",
                           "repeat": want - got, "truth": "legit"})

    gain = 1.0
    victim = env.cluster.vms.get(VICTIM)
    if not flooding and victim is not None:
        cl = env.cluster
        for src in env.profile.sources:
            vm = cl.vms[src]
            vm.contention_emitted = float(min(attack.attempts.get(src, 0.0), cfg.contention_cap))
            due = step > env.attack_state.get(src, 0)
            if (cfg.attack_enabled and due and not vm.isolated and vm.host != victim.host
                    and cl.machine_load(victim.host) < cl.vms_per_machine_cap):
                vm.host = victim.host
        contention = sum(
            min(attack.contribution.get(src, 0.0), cfg.contention_cap)
            for src in env.profile.sources
            if not cl.vms[src].isolated and cl.vms[src].host == victim.host
        )
        gain = min(1.0, max(0.0, 1.0 - contention / 100.0))
        for src in env.profile.sources:
            vm = cl.vms[src]
            events.append({
                "timestamp": ts, "event": "vm_contention", "source_ip": None, "truth": "attack",
                "metrics": {"vm_id": src, "host": vm.host, "demand": vm.contention_emitted,
                            "effective": attack.contribution.get(src, 0.0),
                            "co_resident": vm.host == victim.host},
            })
    if victim is not None:
        victim.progress = min(cfg.runtime_cap, victim.progress + gain)
        if not flooding:
            events.append({"timestamp": ts, "event": "victim_progress", "truth": "telemetry",
                           "metrics": {"gain": gain, "progress": victim.progress, "host": victim.host}})

    total_conns = 0
    half_open = slow = affected = 0
    for pod in svc.pods:
        t = pod.total
        total_conns += t
        pod.memory_util = min(cfg.mem_cap, 100.0 * t / cap)
        h, s = pod.half_open_count, pod.hostile_connections
        half_open += h
        slow += s
        if h or s:
            affected += 1
    capacity = env.capacity
    events.append({
        "timestamp": ts, "event": "service_metrics", "source_ip": None, "truth": "telemetry",
        "metrics": {
            "cpu_util": 100.0 * total_conns / capacity,
            "memory_util": sum(p.memory_util for p in svc.pods) / len(svc.pods),
            "total_connections": total_conns,
            "legit_connections": served,
            "half_open_connections": half_open,
            "slow_connections": slow,
            "legit_offered": offered,
            "legit_served": served,
            "active_replicas": svc.active_replicas,
            "active_pods": svc.active_pods,
            "pods_per_replica": svc.pods_per_replica,
            "pod_pool": cfg.pod_pool,
            "max_replicas": cfg.max_replicas,
            "affected_pods": affected,
            "blocked_sources": sorted(svc.blocked_sources),
            "rate_limited": dict(sorted(svc.rate_limits.items())),
        },
    })
    events.append({"timestamp": ts, "event": "heartbeat", "status": "ok", "truth": "noise"})

    web = served / offered if offered else 1.0
    availability = min(web, gain)
    env.last_attempts = dict(attack.attempts)
    env.clock.step = step
    outcome = StepOutcome(
        step=step,
        availability=availability,
        survived=availability >= cfg.survive_threshold,
        raw_events=events,
        offered=offered,
        served=served,
        victim_gain=gain,
        hostile_occupancy=half_open + slow,
    )
    return env, outcome


def label_round(
    cfg: ScenarioConfig,
    outcomes: Sequence[StepOutcome],
    hostile_start: int,
) -> RoundLabel:
    """Ground-truth label for the steps of one round."""
    avail = [o.availability for o in outcomes]
    if cfg.scenario == "memory_dos":
        return RoundLabel.SECURE if all(a >= cfg.memory_secure_gain for a in avail) else RoundLabel.COMPROMISED
    if any(a < cfg.compromise_threshold for a in avail):
        return RoundLabel.COMPROMISED
    hostile_end = outcomes[-1].hostile_occupancy if outcomes else hostile_start
    if all(o.survived for o in outcomes) and hostile_end <= hostile_start:
        return RoundLabel.SECURE
    return RoundLabel.CONTESTED


def check_termination(round_history: Iterable, window: int = 5) -> Termination:
    labels = [RoundLabel(x) if not isinstance(x, RoundLabel) else x for x in round_history]
    if len(labels) < window:
        return Termination.CONTINUE
    tail = labels[-window:]
    if all(x is RoundLabel.SECURE for x in tail):
        return Termination.SECURE_END
    if all(x is RoundLabel.COMPROMISED for x in tail):
        return Termination.COMPROMISED_END
    return Termination.CONTINUE
