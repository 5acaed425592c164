from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from proactive_defense.analyzer import Constraints, RiskAssessment
from proactive_defense.config import DIMENSIONS, ScenarioConfig, Weights
from proactive_defense.decision import (Action, Candidate, PlanningError, Subtask, decide, decompose,
                                        epsilon_for, objective_score, order_actions, respects_dag, select_plan,
                                        toposort, validate_action)
from proactive_defense.env import init_env
from proactive_defense.feedback import EpisodeMemory
from proactive_defense.reasoner import OracleReasoner

W = Weights()


def assessment(hyp="syn_flood", subs=(3, 4, 2), max_new=5):
    s, i, d = subs
    return RiskAssessment(s, i, d, float(s + i + d), [], hyp, "", Constraints(max_new, 50.0, 50.0))


def cand(name, **est):
    return Candidate(name, [Action(name, {})], {d: est.get(d, 0.0) for d in DIMENSIONS})


# -- decompose ------------------------------------------------------------------

def test_syn_flood_high_risk_order():
    tasks = decompose(assessment(subs=(3, 4, 2)))
    assert [t.objective for t in tasks] == ["block_sources", "recycle_half_open", "scale_out"]
    assert tasks[0].priority == 3


def test_risk_zero_no_subtasks():
    assert decompose(assessment(subs=(0, 0, 0))) == []


def test_equal_priority_independent_by_id():
    objs = [{"id": "S2", "objective": "b"}, {"id": "S1", "objective": "a"}]
    assert [t.id for t in decompose(assessment(), objs)] == ["S1", "S2"]


def test_higher_risk_objective_first():
    objs = [{"id": "S1", "objective": "low", "risk": 1}, {"id": "S2", "objective": "high", "risk": 9}]
    assert [t.id for t in decompose(assessment(), objs)] == ["S2", "S1"]


def test_cycle_is_planning_error():
    with pytest.raises(PlanningError):
        toposort([Subtask("A", "a", 1, ("B",)), Subtask("B", "b", 1, ("A",))])


@given(st.integers(2, 7), st.data())
def test_toposort_is_linear_extension(n, data):
    ids = [f"S{i}" for i in range(n)]
    tasks = []
    for i, sid in enumerate(ids):
        deps = data.draw(st.lists(st.sampled_from(ids[:i]), unique=True)) if i else []
        tasks.append(Subtask(sid, sid, data.draw(st.integers(1, 3)), tuple(deps)))
    random.Random(n).shuffle(tasks)
    order = [t.id for t in toposort(tasks)]
    pos = {sid: k for k, sid in enumerate(order)}
    assert all(pos[d] < pos[t.id] for t in tasks for d in t.depends_on)


# -- validate_action -------------------------------------------------------------

def caps(scenario="syn_flood"):
    return init_env(ScenarioConfig(scenario=scenario)).caps()


def test_scale_to_eleven_rejected():
    v = validate_action(Action("scale_replicas", {"delta": 6}), None, caps())
    assert any(x["code"] == "replica_cap" for x in v)


def test_invalid_ip_rejected():
    v = validate_action({"action_kind": "block_source", "parameters": {"ip": "999.1.2"}}, None, caps())
    assert [x["code"] for x in v] == ["bad_ip"]


def test_migrate_to_full_machine_rejected():
    c = caps("memory_dos")
    env = init_env(ScenarioConfig(scenario="memory_dos"))
    full = next(m for m in range(c.machines) if m != c.vm_hosts["vm-victim"])
    env.cluster.bystanders[full] = 10
    v = validate_action(Action("migrate_vm", {"vm_id": "vm-victim", "target_machine": full}), None, env.caps())
    assert any(x["code"] == "machine_full" for x in v)


def test_violations_are_machine_readable_and_never_raise():
    for a in [None, 3, {"action_kind": "tarpit"}, Action("rate_limit", {"ip": 5, "max_per_step": "x"})]:
        v = validate_action(a, None, caps())
        assert v and all(set(x) == {"code", "field", "message"} for x in v)


# -- select_plan -----------------------------------------------------------------

def test_pure_exploitation():
    a, b = cand("A", security=0.9), cand("B", security=0.4)
    assert select_plan([a, b], {"security": 1, "recovery_time": 0, "resource": 0, "financial_cost": 0, "qos": 0},
                       0.0).strategy == "A"


def test_exploration_skips_memory_failures():
    a, b = cand("A", security=0.9), cand("B", security=0.4)
    mem = EpisodeMemory()
    mem.log_round(1, "ctx", a.signature, "compromised")
    for seed in range(20):
        plan = select_plan([a, b], W, 1.0, mem, "ctx", random.Random(seed))
        assert plan.strategy == "B"


def test_all_flagged_falls_back_to_full_set():
    a, b = cand("A", security=0.9), cand("B", security=0.4)
    mem = EpisodeMemory()
    for c in (a, b):
        mem.log_round(1, "ctx", c.signature, "compromised")
    assert select_plan([a, b], W, 0.0, mem, "ctx").strategy in ("A", "B")


def test_empty_candidates_error():
    with pytest.raises(PlanningError):
        select_plan([], W, 0.0)


def test_epsilon_schedule():
    assert epsilon_for(1) == 0.1
    assert epsilon_for(3) == pytest.approx(0.1 * 0.81)


unit = st.floats(0, 1, allow_nan=False)
weights_st = st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5)


@given(st.lists(st.lists(unit, min_size=5, max_size=5), min_size=1, max_size=4), weights_st,
       st.floats(0.01, 100.0))
def test_exploitation_equals_exhaustive_argmax_and_scale_invariant(ests, w, k):
    total = sum(w)
    wd = {d: x / total for d, x in zip(DIMENSIONS, w)}
    cands = [Candidate(f"c{i}", [Action(f"k{i}", {})], dict(zip(DIMENSIONS, e))) for i, e in enumerate(ests)]
    plan = select_plan(cands, wd, 0.0)
    brute = max(objective_score(c.estimates, wd) for c in cands)
    assert plan.score == pytest.approx(brute, rel=1e-9, abs=1e-12)
    scaled = select_plan(cands, {d: v * k for d, v in wd.items()}, 0.0)
    assert scaled.strategy == plan.strategy


# -- dependency respect and gatekeeping -------------------------------------------

def test_order_actions_respects_dag():
    tasks = decompose(assessment())
    acts = [Action("scale_replicas", {"delta": 1}), Action("recycle_half_open", {"min_age": 0}),
            Action("block_source", {"ip": "203.0.113.10"})]
    assert not respects_dag(acts, tasks)
    ordered = order_actions(acts, tasks)
    assert [a.action_kind for a in ordered] == ["block_source", "recycle_half_open", "scale_replicas"]
    assert respects_dag(ordered, tasks)


class ScriptedPlanner:
    def __init__(self, candidates):
        self.candidates = candidates

    def complete(self, role_prompt, payload, schema):
        from proactive_defense.reasoner import Completion, Usage
        return Completion({"candidates": self.candidates, "rationale": "scripted"}, Usage())


def _est(v):
    return {d: v for d in DIMENSIONS}


def test_decide_never_emits_rejected_action():
    env = init_env(ScenarioConfig())
    from proactive_defense.collector import collect
    bad = {"strategy": "bad", "estimates": _est(1.0),
           "actions": [{"action_kind": "scale_replicas", "parameters": {"delta": 50}}]}
    good = {"strategy": "good", "estimates": _est(0.2),
            "actions": [{"action_kind": "recycle_half_open", "parameters": {"min_age": 0}}]}
    d = decide(assessment(), collect([]), env.caps(), ScriptedPlanner([bad, good]), W, 0.0, random.Random(0))
    assert d.plan.strategy == "good"
    assert d.rejected and d.rejected[0]["strategy"] == "bad"
    d = decide(assessment(), collect([]), env.caps(), ScriptedPlanner([bad]), W, 1.0, random.Random(0))
    assert d.plan is None


def test_oracle_decide_plans_are_valid_and_ordered(scenario):
    from proactive_defense.collector import collect
    from proactive_defense.env import advance_step
    env = init_env(ScenarioConfig(scenario=scenario))
    rec = collect([e for _ in range(8) for e in advance_step(env)[1].raw_events])
    a = assessment(hyp=scenario, max_new=5)
    d = decide(a, rec, env.caps(), OracleReasoner(), W, 0.0, random.Random(0))
    assert d.plan is not None
    for act in d.plan.actions:
        assert validate_action(act, a.constraints, env.caps()) == []
    assert respects_dag(d.plan.actions, d.subtasks)


def test_memory_failed_pair_never_reselected():
    cands = [cand(k, security=s) for k, s in zip("ABCD", (0.9, 0.8, 0.7, 0.1))]
    mem = EpisodeMemory()
    mem.log_round(1, "ctx", cands[0].signature, "compromised")
    for eps, seed in itertools.product((0.0, 0.5, 1.0), range(10)):
        assert select_plan(cands, W, eps, mem, "ctx", random.Random(seed)).strategy != "A"
