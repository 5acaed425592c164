from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from proactive_defense.attacks import emit_load
from proactive_defense.config import ScenarioConfig
from proactive_defense.decision import Action
from proactive_defense.deployer import (REPAIR_RETRIES, ActionProgram, ContractViolation, DefenseLibrary,
                                        GenerationError, NotFound, deploy_plan, execute, generate_program,
                                        match_library, validate_program)
from proactive_defense.dsl import SCHEMAS, check_syntax, describe, render_script
from proactive_defense.env import advance_step, init_env, snapshot
from proactive_defense.reasoner import Completion, CostLedger, OracleReasoner, Usage

ATTACKER = "203.0.113.10"


class Scripted:
    """Replays fixed program replies and counts calls."""

    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def complete(self, role_prompt, payload, schema):
        self.calls += 1
        return Completion(dict(self.reply), Usage(10, 5, 0.0, 0.0))


# -- library -----------------------------------------------------------------

def test_seeded_lookup():
    prog = match_library(DefenseLibrary.seeded(), "block_source", {"ip": ATTACKER})
    assert isinstance(prog, ActionProgram) and prog.origin == "library"


def test_unknown_kind_not_found():
    r = match_library(DefenseLibrary.seeded(), "tarpit", {})
    assert isinstance(r, NotFound) and not r


def test_schema_mismatch_not_found_with_reason():
    r = match_library(DefenseLibrary.seeded(), "block_source", {"address": ATTACKER})
    assert isinstance(r, NotFound) and "schema" in r.reason


def test_archive_dedup_and_reuse(tmp_path):
    lib = DefenseLibrary.seeded()
    n = len(lib)
    assert not lib.match("throttle_vm", {"vm_id": "vm-atk-0", "cap": 2.0})
    prog = generate_program(describe("throttle_vm", {"vm_id": "vm-atk-0", "cap": 2.0}), {}, {}, OracleReasoner())
    lib.archive(prog, "secure")
    assert len(lib) == n + 1
    lib.archive(prog, "contested")
    assert len(lib) == n + 1
    assert [h["outcome"] for h in lib.history(prog.kind, prog.parameters)] == ["secure", "contested"]
    found = lib.match("throttle_vm", {"vm_id": "vm-atk-1", "cap": 5.0})
    assert isinstance(found, ActionProgram) and found.origin == "library"
    lib.save(tmp_path / "lib.json")
    assert DefenseLibrary.load(tmp_path / "lib.json").to_dict() == lib.to_dict()


# -- generation ---------------------------------------------------------------

def test_block_objective_generates_drop_rule():
    prog = generate_program("block all incoming traffic from IP 192.168.1.10, and log this action", {}, {},
                            OracleReasoner())
    assert (prog.kind, prog.parameters) == ("block_source", {"ip": "192.168.1.10"})
    assert "iptables -A INPUT -s" in prog.audit_script() and "192.168.1.10" in prog.audit_script()
    assert "-j DROP" in prog.audit_script()
    assert prog.metadata["purpose"]


@pytest.mark.parametrize("kind,params", [
    ("block_source", {"ip": ATTACKER}), ("rate_limit", {"ip": ATTACKER, "max_per_step": 20}),
    ("recycle_half_open", {"min_age": 0}), ("scale_replicas", {"delta": 2}), ("shuffle_address", {}),
    ("migrate_vm", {"vm_id": "vm-victim", "target_machine": 3}),
])
def test_oracle_generation_matches_library(kind, params):
    lib_prog = DefenseLibrary.seeded().match(kind, params)
    gen = generate_program(describe(kind, params), {}, {}, OracleReasoner())
    assert (gen.kind, gen.parameters) == (lib_prog.kind, lib_prog.parameters)


def test_out_of_range_reply_fails_after_retries():
    bad = Scripted({"kind": "scale_replicas", "parameters": {"delta": 500}, "purpose": "grow"})
    with pytest.raises(GenerationError):
        generate_program("scale a lot", {}, {}, bad)
    assert bad.calls == REPAIR_RETRIES + 1


# -- validation ---------------------------------------------------------------

def test_scale_plus_twenty_static_failure():
    env = init_env(ScenarioConfig())
    rep = validate_program(ActionProgram("scale_replicas", {"delta": 20}), env)
    assert rep.syntax_ok and not rep.static_ok and not rep.deployable
    assert {"pod_pool", "replica_cap"} & {f["code"] for f in rep.failures}


def test_block_allowlisted_static_failure():
    env = init_env(ScenarioConfig())
    rep = validate_program(ActionProgram("block_source", {"ip": env.service.allowlist[0]}), env)
    assert not rep.static_ok


def test_recycle_under_flood_passes_all_stages():
    env = init_env(ScenarioConfig())
    for pod in env.service.pods:
        pod.half_open = [[ATTACKER, 1, 250]]
    before = snapshot(env)
    rep = validate_program(ActionProgram("recycle_half_open", {"min_age": 0}), env)
    assert rep.syntax_ok and rep.static_ok and rep.sandbox_ok
    assert rep.availability_with > rep.availability_without
    assert env == before


def test_sandbox_rejects_availability_regression():
    env2 = init_env(ScenarioConfig(attack_enabled=False, initial_replicas=3))
    for pod in env2.service.pods:
        pod.half_open = [[ATTACKER, 1, 240]]
    rep = validate_program(ActionProgram("scale_replicas", {"delta": -2}), env2)
    assert not rep.sandbox_ok
    assert rep.failures[0]["code"] == "availability_regression"


# -- execution ------------------------------------------------------------------

def _run(env, prog):
    rep = validate_program(prog, env)
    assert rep.deployable, rep.failures
    return execute(prog, env, rep)[1]


def test_block_then_zero_load():
    env = init_env(ScenarioConfig())
    _run(env, ActionProgram("block_source", {"ip": ATTACKER}))
    assert emit_load(env.profile, env, env.clock.step + 1).contribution[ATTACKER] == 0


def test_scale_plus_two_capacity():
    env = init_env(ScenarioConfig())
    rec = _run(env, ActionProgram("scale_replicas", {"delta": 2}))
    assert env.service.active_replicas == 7 and env.service.active_pods == 70
    assert env.capacity == 7 * 10 * 256 == 17920
    assert rec.resource_delta == 20 and rec.latency >= 0


def test_migrate_victim_restores_progress():
    env = init_env(ScenarioConfig(scenario="memory_dos"))
    for _ in range(2):
        advance_step(env)
    target = min(range(env.cluster.machines),
                 key=lambda m: (env.cluster.machine_load(m), m) if m != env.cluster.vms["vm-victim"].host else (99, m))
    _run(env, ActionProgram("migrate_vm", {"vm_id": "vm-victim", "target_machine": target}))
    _, o = advance_step(env)
    assert o.victim_gain == 1.0


def test_execute_without_report_is_contract_violation():
    env = init_env(ScenarioConfig())
    prog = ActionProgram("block_source", {"ip": ATTACKER})
    with pytest.raises(ContractViolation):
        execute(prog, env, None)
    bad = validate_program(ActionProgram("scale_replicas", {"delta": 40}), env)
    with pytest.raises(ContractViolation):
        execute(ActionProgram("scale_replicas", {"delta": 40}), env, bad)
    rep = validate_program(prog, env)
    advance_step(env)
    with pytest.raises(ContractViolation):
        execute(prog, env, rep)
    assert env.mutations == 0


def test_deploy_plan_generates_and_records():
    env = init_env(ScenarioConfig(scenario="memory_dos"))
    for _ in range(4):
        advance_step(env)
    lib, ledger = DefenseLibrary.seeded(), CostLedger()
    steps = deploy_plan([Action("throttle_vm", {"vm_id": "vm-atk-0", "cap": 2.0}),
                         Action("isolate_vm", {"vm_id": "vm-atk-1"})], env, lib, OracleReasoner(), None, ledger)
    assert [s.record.ok for s in steps] == [True, True]
    assert {s.record.origin for s in steps} == {"generated"}
    assert env.cluster.vms["vm-atk-1"].isolated


def test_deploy_plan_writes_audit(tmp_path):
    env = init_env(ScenarioConfig())
    deploy_plan([Action("block_source", {"ip": ATTACKER})], env, DefenseLibrary.seeded(), OracleReasoner(),
                audit_dir=tmp_path)
    scripts = list(tmp_path.glob("*.sh"))
    assert len(scripts) == 1 and ATTACKER in scripts[0].read_text()


def test_render_script_for_every_kind():
    for kind in SCHEMAS:
        if kind == "generated":
            continue
        params = {"ip": ATTACKER, "max_per_step": 5, "min_age": 0, "delta": 1, "vm_id": "vm-atk-0",
                  "target_machine": 1, "cap": 2.0}
        p = {k: params[k] for k in SCHEMAS[kind]}
        assert check_syntax(kind, p) == []
        assert render_script(kind, p).startswith("#!/bin/bash")


# -- gate totality (property) ------------------------------------------------------

ips = st.one_of(st.sampled_from([ATTACKER, "198.51.100.23", "10.0.1.1", "999.0.0.1", "x"]), st.text(max_size=8))
values = st.one_of(st.integers(-200, 200), st.floats(-50, 200, allow_nan=False), ips, st.none(), st.booleans())


@st.composite
def programs(draw):
    kind = draw(st.sampled_from(sorted(SCHEMAS) + ["tarpit"]))
    names = list(SCHEMAS.get(kind, {"x": None}))
    if draw(st.booleans()):
        names.append(draw(st.sampled_from(["extra", "ip", "delta", "vm_id"])))
    vm = st.sampled_from(["vm-victim", "vm-atk-0", "vm-atk-1", "vm-nope"])
    params = {n: draw(vm if n == "vm_id" else values) for n in names}
    if names and draw(st.booleans()):
        params.pop(names[0], None)
    return ActionProgram(kind, params, draw(st.sampled_from(["library", "generated"])),
                         {"purpose": draw(st.sampled_from(["", "p"]))})


@given(programs(), st.sampled_from(["syn_flood", "memory_dos"]))
def test_gate_totality(prog, scenario):
    env = init_env(ScenarioConfig(scenario=scenario))
    advance_step(env)
    live = snapshot(env)
    rep = validate_program(prog, env)
    assert env == live
    if not rep.deployable:
        with pytest.raises(ContractViolation):
            execute(prog, env, rep)
        assert env == live
