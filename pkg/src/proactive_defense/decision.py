"""Subtask decomposition, action validation and exploration-aware plan selection."""
from __future__ import annotations

import heapq
import random
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence

from .analyzer import RiskAssessment, impact_inputs, risk_bucket
from .collector import SecurityRecord
from .config import DIMENSIONS, Weights
from .dsl import OBJECTIVE_OF, check_static, check_syntax
from .env import VICTIM, EnvCaps
from .reasoner import CostLedger, Reasoner, ReasonerError, role_prompt, schemas

# hypothesis -> [(objective, depends_on)]
DEPENDENCIES: dict[str, list[tuple[str, tuple[str, ...]]]] = {
    "syn_flood": [("block_sources", ()), ("recycle_half_open", ("block_sources",)),
                  ("scale_out", ("recycle_half_open",))],
    "slow_http": [("block_sources", ()), ("recycle_half_open", ("block_sources",)),
                  ("scale_out", ("recycle_half_open",))],
    "memory_dos": [("evict_contender", ())],
    "unknown": [("scale_out", ())],
}
PRIORITY = {"high": 3, "med": 2, "low": 1}
FLOOD_ALERTS = ("syn_half_open", "syn_dropped", "slow_http_conn", "http_dropped")
TIE_RTOL = 1e-9


class PlanningError(RuntimeError):
    pass


@dataclass
class Subtask:
    id: str
    objective: str
    priority: int
    depends_on: tuple = ()
    constraints: dict = field(default_factory=dict)


@dataclass
class Action:
    action_kind: str
    parameters: dict
    target: Optional[str] = None
    expected_effect: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Action":
        return cls(d["action_kind"], dict(d.get("parameters") or {}), d.get("target"), d.get("expected_effect", ""))


def signature_of(actions: Iterable[Action]) -> tuple:
    """Plan identity for memory matching: the set of action kinds used."""
    return tuple(sorted({a.action_kind for a in actions}))


@dataclass
class Candidate:
    strategy: str
    actions: list
    estimates: dict
    rationale: str = ""

    @property
    def signature(self) -> tuple:
        return signature_of(self.actions)


@dataclass
class DefensePlan:
    actions: list
    rationale: str
    explored: bool = False
    strategy: str = ""
    score: float = 0.0
    context: str = ""

    @property
    def signature(self) -> tuple:
        return signature_of(self.actions)

    def to_dict(self) -> dict:
        return {
            "actions": [a.to_dict() for a in self.actions], "rationale": self.rationale, "explored": self.explored,
            "strategy": self.strategy, "score": self.score, "context": self.context,
            "signature": list(self.signature),
        }


class PlanMemory(Protocol):
    def flag(self, context: str, signature: tuple) -> Optional[bool]:
        """Most recent outcome for the pair: True success, False failure, None unseen."""

    def tally(self, context: str, signature: tuple) -> tuple[int, int]:
        """(successes, failures) recorded for the pair."""


def context_of(hypothesis: str, risk_score: float) -> str:
    return f"{hypothesis}:{risk_bucket(risk_score)}"


# -- decomposition ---------------------------------------------------------

def toposort(subtasks: Sequence[Subtask]) -> list[Subtask]:
    """Kahn's algorithm; ready nodes leave by (higher priority, then id)."""
    by_id = {s.id: s for s in subtasks}
    if len(by_id) != len(subtasks):
        raise PlanningError("duplicate subtask id")
    indeg = {s.id: 0 for s in subtasks}
    children: dict[str, list[str]] = {s.id: [] for s in subtasks}
    for s in subtasks:
        for dep in s.depends_on:
            if dep not in by_id:
                raise PlanningError(f"{s.id} depends on unknown subtask {dep!r}")
            indeg[s.id] += 1
            children[dep].append(s.id)
    ready = [(-by_id[i].priority, i) for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        _, i = heapq.heappop(ready)
        out.append(by_id[i])
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, (-by_id[c].priority, c))
    if len(out) != len(subtasks):
        raise PlanningError("cyclic subtask dependencies")
    return out


def decompose(
    assessment: RiskAssessment,
    objectives: Optional[Sequence[Mapping[str, Any]]] = None,
) -> list[Subtask]:
    """Ordered subtasks for the assessed attack.

    ``objectives`` overrides the default dependency table with entries of
    ``{"id", "objective", "depends_on", "risk"?}``; a per-entry ``risk``
    sets that subtask's priority class, otherwise the assessment's risk does.
    """
    if assessment is None:
        raise PlanningError("no assessment")
    if assessment.risk_score <= 0:
        return []
    base = PRIORITY[risk_bucket(assessment.risk_score)]
    limits = {"max_new_replicas": assessment.constraints.max_new_replicas}
    if objectives is None:
        table = DEPENDENCIES.get(assessment.attack_hypothesis, DEPENDENCIES["unknown"])
        ids = {obj: f"S{i + 1}" for i, (obj, _) in enumerate(table)}
        tasks = [Subtask(ids[obj], obj, base, tuple(ids[d] for d in deps), dict(limits)) for obj, deps in table]
    else:
        tasks = [
            Subtask(str(o["id"]), str(o.get("objective", o["id"])),
                    PRIORITY[risk_bucket(o["risk"])] if "risk" in o else base,
                    tuple(o.get("depends_on", ())), {**limits, **o.get("constraints", {})})
            for o in objectives
        ]
    return toposort(tasks)


# -- validation ------------------------------------------------------------

def validate_action(action: Any, constraints: Any = None, env_caps: Optional[EnvCaps] = None) -> list[dict]:
    """Machine-readable violations; an empty list means the action is admissible."""
    if isinstance(action, Mapping):
        kind, params = action.get("action_kind"), action.get("parameters", {})
    else:
        kind, params = getattr(action, "action_kind", None), getattr(action, "parameters", None)
    if kind == "generated":
        return [{"code": "not_plannable", "field": "action_kind", "message": "plans use primitive kinds only"}]
    found = check_syntax(kind, params)
    if not found:
        max_new = getattr(constraints, "max_new_replicas", None)
        if isinstance(constraints, Mapping):
            max_new = constraints.get("max_new_replicas")
        found = check_static(kind, params, env_caps, max_new)
    return [v.as_dict() for v in found]


def validate_candidate(c: Candidate, constraints: Any, caps: Optional[EnvCaps]) -> list[dict]:
    out = []
    for i, a in enumerate(c.actions):
        out.extend({**v, "action": i} for v in validate_action(a, constraints, caps))
    scale = sum(a.parameters.get("delta", 0) for a in c.actions
                if a.action_kind == "scale_replicas" and isinstance(a.parameters.get("delta"), int))
    max_new = getattr(constraints, "max_new_replicas", None)
    if max_new is not None and scale > max_new:
        out.append({"code": "resource_constraint", "field": "delta", "message": f"plan adds {scale} > {max_new}"})
    return out


def order_actions(actions: Sequence[Action], subtasks: Sequence[Subtask]) -> list[Action]:
    """Stable sort by the position of each action's subtask; unmapped kinds go last."""
    rank = {s.objective: i for i, s in enumerate(subtasks)}
    return sorted(actions, key=lambda a: rank.get(OBJECTIVE_OF.get(a.action_kind, ""), len(rank)))


def respects_dag(actions: Sequence[Action], subtasks: Sequence[Subtask]) -> bool:
    """True iff no action precedes an action of a subtask it (transitively) depends on."""
    by_id = {s.id: s for s in subtasks}
    obj_id = {s.objective: s.id for s in subtasks}

    def ancestors(sid: str) -> set:
        seen, stack = set(), list(by_id[sid].depends_on)
        while stack:
            d = stack.pop()
            if d not in seen:
                seen.add(d)
                stack.extend(by_id[d].depends_on)
        return seen

    ids = [obj_id.get(OBJECTIVE_OF.get(a.action_kind, "")) for a in actions]
    for i, sid in enumerate(ids):
        if sid is None:
            continue
        later = {x for x in ids[i + 1:] if x is not None}
        if later & ancestors(sid):
            return False
    return True


# -- selection ---------------------------------------------------------------

def _weights(weights: Any) -> dict[str, float]:
    if isinstance(weights, Weights):
        return weights.as_dict()
    return {d: float(weights[d]) for d in DIMENSIONS}


def objective_score(estimates: Mapping[str, float], weights: Any) -> float:
    w = _weights(weights)
    return sum(w[d] * float(estimates.get(d, 0.0)) for d in DIMENSIONS)


def adjusted_estimates(c: Candidate, memory: Optional[PlanMemory], context: str) -> dict:
    est = dict(c.estimates)
    if memory is not None:
        s, f = memory.tally(context, c.signature)
        if s + f:
            est["security"] = (float(est.get("security", 0.0)) + s) / (1 + s + f)
    return est


def argmax_index(scores: Sequence[float]) -> int:
    top = max(scores)
    tol = TIE_RTOL * abs(top)
    return next(i for i, s in enumerate(scores) if s >= top - tol)


def select_plan(
    candidates: Sequence[Candidate],
    weights: Any,
    epsilon: float,
    memory: Optional[PlanMemory] = None,
    context: str = "",
    rng: Optional[random.Random] = None,
) -> DefensePlan:
    if not candidates:
        raise PlanningError("no candidate plans")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    rng = rng or random.Random(0)
    pool = list(candidates)
    if memory is not None:
        unflagged = [c for c in pool if memory.flag(context, c.signature) is not False]
        pool = unflagged or pool
    scores = [objective_score(adjusted_estimates(c, memory, context), weights) for c in pool]
    best = argmax_index(scores)
    chosen, explored = best, False
    if rng.random() < epsilon and len(pool) > 1:
        chosen = rng.choice([i for i in range(len(pool)) if i != best])
        explored = True
    c = pool[chosen]
    return DefensePlan(list(c.actions), c.rationale, explored, c.strategy, scores[chosen], context)


def epsilon_for(episode: int, base: float = 0.1, decay: float = 0.9) -> float:
    return base * decay ** max(0, episode - 1)


# -- stage driver -------------------------------------------------------------

def plan_state(record: SecurityRecord, caps: EnvCaps) -> dict:
    """Observed targets for the planner: offenders, contenders, placement options."""
    attempts: dict[str, int] = {}
    for a in record.alerts:
        if a.kind in FLOOD_ALERTS and a.source and a.source not in caps.blocked_sources \
                and a.source not in caps.allowlist:
            attempts[a.source] = attempts.get(a.source, 0) + a.count
    offenders = sorted(attempts, key=lambda ip: (-attempts[ip], ip))
    s = record.status_summary or {}
    contenders = sorted(
        vm for vm, m in (s.get("vm_contention") or {}).items()
        if m.get("demand", 0) > 0 and vm != VICTIM and caps.vm_hosts.get(vm, -1) >= 0
    )
    victim_host = caps.vm_hosts.get(VICTIM)
    target = None
    if victim_host is not None:
        options = [(load, m) for m, load in enumerate(caps.machine_loads)
                   if m != victim_host and load < caps.vms_per_machine]
        target = min(options)[1] if options else None
    _, loss = impact_inputs(record)
    return {
        "offenders": offenders,
        "half_open": int(s.get("half_open_connections", 0)),
        "slow": int(s.get("slow_connections", 0)),
        "availability_loss": loss,
        "contenders": contenders,
        "victim": {"vm_id": VICTIM, "host": victim_host} if victim_host is not None else None,
        "target_machine": target,
        "active_replicas": caps.active_replicas,
    }


@dataclass
class Decision:
    plan: Optional[DefensePlan]
    subtasks: list
    candidates: list
    rejected: list
    context: str
    error: Optional[str] = None


def decide(
    assessment: RiskAssessment,
    record: SecurityRecord,
    caps: EnvCaps,
    reasoner: Reasoner,
    weights: Any,
    epsilon: float,
    rng: random.Random,
    memory: Optional[PlanMemory] = None,
    ledger: Optional[CostLedger] = None,
) -> Decision:
    """Decompose, ask the reasoner for candidates, gatekeep them, select one.

    Returns a decision with ``plan=None`` when there is nothing to defend,
    no admissible candidate, or the reasoner failed.
    """
    context = context_of(assessment.attack_hypothesis, assessment.risk_score)
    try:
        subtasks = decompose(assessment)
    except PlanningError as exc:
        subtasks = [Subtask("S1", "scale_out", 1)]
        err = str(exc)
    else:
        err = None
    if not subtasks:
        return Decision(None, [], [], [], context, err)
    failed = succeeded = []
    if memory is not None and hasattr(memory, "signatures"):
        failed = [list(s) for s in memory.signatures(context, False)]
        succeeded = [list(s) for s in memory.signatures(context, True)]
    payload = {
        "assessment": {
            "attack_hypothesis": assessment.attack_hypothesis, "risk_score": assessment.risk_score,
            "scope_sub": assessment.scope_sub, "impact_sub": assessment.impact_sub,
            "duration_sub": assessment.duration_sub, "bucket": assessment.bucket,
        },
        "constraints": asdict(assessment.constraints),
        "subtasks": [asdict(s) for s in subtasks],
        "state": plan_state(record, caps),
        "memory": {"failed": failed, "succeeded": succeeded},
    }
    try:
        completion = reasoner.complete(role_prompt("decision"), payload, schemas.PLAN)
    except ReasonerError as exc:
        return Decision(None, subtasks, [], [], context, f"reasoner: {exc}")
    if ledger is not None:
        ledger.add("decide", completion.usage)
    candidates, rejected = [], []
    for raw in completion.response["candidates"]:
        actions = [Action.from_dict(a) for a in raw["actions"]]
        c = Candidate(raw["strategy"], order_actions(actions, subtasks), dict(raw["estimates"]),
                      raw.get("rationale", ""))
        if not c.actions:
            continue
        problems = validate_candidate(c, assessment.constraints, caps)
        if problems:
            rejected.append({"strategy": c.strategy, "violations": problems})
        else:
            candidates.append(c)
    if not candidates:
        return Decision(None, subtasks, [], rejected, context, err or "no admissible candidate")
    plan = select_plan(candidates, weights, epsilon, memory, context, rng)
    return Decision(plan, subtasks, candidates, rejected, context, err)
