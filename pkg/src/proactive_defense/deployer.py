"""Action resolution, program generation, three-stage validation, execution and archiving.

Library file schema, version 1 (JSON)::

    {
      "schema_version": 1,
      "entries": [{
        "kind": str,                      # DSL kind
        "schema": [str, ...],             # sorted parameter names
        "origin": "library" | "generated",
        "example": {<param>: value},      # parameters of the archived program
        "metadata": {"purpose": str, "environment": str,
                     "effectiveness": [{"outcome": str, "at": ISO-8601}], "created_at": ISO-8601}
      }]
    }
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from .dsl import SCHEMAS, Violation, check_static, check_syntax, describe, render_script, schema_signature
from .env import EnvState, InvariantViolation, advance_step, snapshot
from .reasoner import CostLedger, Reasoner, ReasonerError, role_prompt, schemas

LIBRARY_VERSION = 1
REPAIR_RETRIES = 2
# throttle_vm and isolate_vm are deliberately absent so the generate/validate/archive
# path is exercised by the co-residency scenario
DEFAULT_SEEDED = ("block_source", "rate_limit", "recycle_half_open", "scale_replicas",
                  "shuffle_address", "migrate_vm", "noop")


class GenerationError(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    """Raised when execution is attempted without a passing validation report."""


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ActionProgram:
    kind: str
    parameters: dict
    origin: str = "library"
    metadata: dict = field(default_factory=dict)
    script: str = ""

    @property
    def key(self) -> tuple:
        return schema_signature(self.kind, self.parameters)

    def audit_script(self) -> str:
        return self.script or render_script(self.kind, self.parameters)


@dataclass(frozen=True)
class NotFound:
    reason: str

    def __bool__(self) -> bool:
        return False


@dataclass
class ValidationReport:
    syntax_ok: bool
    static_ok: bool
    sandbox_ok: bool
    failures: list
    fingerprint: tuple = ()
    availability_with: Optional[float] = None
    availability_without: Optional[float] = None

    @property
    def deployable(self) -> bool:
        return self.syntax_ok and self.static_ok and self.sandbox_ok


@dataclass
class ExecutionRecord:
    kind: str
    parameters: dict
    origin: str
    latency: float
    resource_delta: int
    reasoner_latency: float = 0.0
    ok: bool = True
    error: Optional[str] = None


@dataclass
class LibraryEntry:
    kind: str
    schema: tuple
    origin: str
    example: dict
    metadata: dict


class DefenseLibrary:
    """Programs keyed by (kind, parameter schema). Writes are serialized by the owner."""

    def __init__(self, entries: Optional[Sequence[LibraryEntry]] = None):
        self.entries: dict[tuple, LibraryEntry] = {}
        for e in entries or ():
            self.entries[(e.kind, e.schema)] = e

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def seeded(cls, kinds: Sequence[str] = DEFAULT_SEEDED) -> "DefenseLibrary":
        lib = cls()
        for kind in kinds:
            schema = tuple(sorted(SCHEMAS[kind]))
            lib.entries[(kind, schema)] = LibraryEntry(kind, schema, "library", {}, {
                "purpose": describe(kind, {p: f"<{p}>" for p in schema}) if kind != "scale_replicas"
                else "scale the service replicas by <delta>",
                "environment": "any", "effectiveness": [], "created_at": "seed"})
        return lib

    def match(self, kind: str, parameters: Mapping[str, Any]) -> Union[ActionProgram, NotFound]:
        if kind not in SCHEMAS:
            return NotFound(f"unknown kind {kind!r}")
        entry = self.entries.get(schema_signature(kind, parameters))
        if entry is None:
            if any(k == kind for k, _ in self.entries):
                return NotFound(f"{kind} exists with a different parameter schema than {sorted(parameters)}")
            return NotFound(f"no library program for {kind}")
        if check_syntax(kind, parameters):
            return NotFound(f"parameters do not conform to the {kind} schema")
        return ActionProgram(kind, dict(parameters), "library", dict(entry.metadata))

    def archive(self, program: ActionProgram, outcome: str) -> None:
        key = program.key
        entry = self.entries.get(key)
        if entry is None:
            meta = dict(program.metadata)
            meta.setdefault("environment", "simulated cloud")
            meta.setdefault("created_at", _now())
            meta["effectiveness"] = list(meta.get("effectiveness", []))
            entry = LibraryEntry(program.kind, key[1], program.origin, dict(program.parameters), meta)
            self.entries[key] = entry
        entry.metadata.setdefault("effectiveness", []).append({"outcome": str(outcome), "at": _now()})

    def history(self, kind: str, parameters: Mapping[str, Any]) -> list:
        entry = self.entries.get(schema_signature(kind, parameters))
        return [] if entry is None else list(entry.metadata.get("effectiveness", []))

    def to_dict(self) -> dict:
        return {"schema_version": LIBRARY_VERSION, "entries": [
            {"kind": e.kind, "schema": list(e.schema), "origin": e.origin, "example": e.example,
             "metadata": e.metadata} for e in self.entries.values()]}

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "DefenseLibrary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema_version") != LIBRARY_VERSION:
            raise ValueError(f"unsupported library schema {data.get('schema_version')!r}")
        return cls([LibraryEntry(e["kind"], tuple(e["schema"]), e["origin"], e.get("example", {}), e["metadata"])
                    for e in data["entries"]])


def match_library(library: DefenseLibrary, action_kind: str, parameters: Mapping[str, Any]):
    return library.match(action_kind, parameters)


# -- generation ----------------------------------------------------------------

def generate_program(
    objective_text: str,
    env_summary: Mapping[str, Any],
    constraints: Any,
    reasoner: Reasoner,
    retries: int = REPAIR_RETRIES,
    caps=None,
    ledger: Optional[CostLedger] = None,
) -> ActionProgram:
    """Ask the reasoner for a DSL program; re-prompt with the failures up to ``retries`` times."""
    max_new = getattr(constraints, "max_new_replicas", None)
    if isinstance(constraints, Mapping):
        max_new = constraints.get("max_new_replicas")
    payload: dict[str, Any] = {
        "objective": objective_text,
        "environment": dict(env_summary),
        "constraints": constraints if isinstance(constraints, Mapping) else getattr(constraints, "__dict__", {}),
        "previous_failures": [],
    }
    prompt = role_prompt("deployer")
    last: list = []
    for _ in range(retries + 1):
        try:
            completion = reasoner.complete(prompt, payload, schemas.PROGRAM)
        except ReasonerError as exc:
            last = [f"reasoner: {exc}"]
            payload["previous_failures"] = payload["previous_failures"] + last
            continue
        if ledger is not None:
            ledger.add("deploy", completion.usage)
        r = completion.response
        problems = check_syntax(r["kind"], r["parameters"])
        if not problems:
            problems = check_static(r["kind"], r["parameters"], caps, max_new)
        if not problems:
            meta = {"purpose": r["purpose"], "environment": str(env_summary.get("scenario", "simulated cloud")),
                    "effectiveness": [], "created_at": _now()}
            script = r.get("script") or render_script(r["kind"], r["parameters"])
            return ActionProgram(r["kind"], dict(r["parameters"]), "generated", meta, script)
        last = [f"{v.field}: {v.message}" for v in problems]
        payload["previous_failures"] = payload["previous_failures"] + last
    raise GenerationError(f"no valid program for {objective_text!r} after {retries + 1} attempts: {last}")


# -- validation and execution ----------------------------------------------------

def fingerprint(program: ActionProgram, env: EnvState) -> tuple:
    return (program.kind, json.dumps(program.parameters, sort_keys=True), id(env), env.clock.step, env.mutations)


def apply_effect(program: ActionProgram, env: EnvState) -> None:
    """The only place program effects touch an environment."""
    p = program.parameters
    k = program.kind
    if k == "block_source":
        env.block(p["ip"])
    elif k == "rate_limit":
        env.rate_limit(p["ip"], p["max_per_step"])
    elif k == "recycle_half_open":
        env.recycle(p["min_age"])
    elif k == "scale_replicas":
        env.scale_to(env.service.active_replicas + p["delta"])
    elif k == "shuffle_address":
        env.shuffle_address()
    elif k == "migrate_vm":
        env.migrate_vm(p["vm_id"], p["target_machine"])
    elif k == "throttle_vm":
        env.throttle_vm(p["vm_id"], p["cap"])
    elif k == "isolate_vm":
        env.isolate_vm(p["vm_id"])
    elif k == "generated":
        for step in p["steps"]:
            apply_effect(ActionProgram(step["kind"], dict(step.get("parameters", {}))), env)
    elif k == "noop":
        pass
    else:
        raise ContractViolation(f"no effect defined for {k!r}")


def validate_program(
    program: ActionProgram,
    env: EnvState,
    tolerance: float = 0.0,
    max_new_replicas: Optional[int] = None,
) -> ValidationReport:
    """Syntax, static and sandbox checks. The live ``env`` is never modified."""
    fp = fingerprint(program, env)
    syn = check_syntax(program.kind, program.parameters)
    if syn:
        return ValidationReport(False, False, False, [v.as_dict() for v in syn], fp)
    if program.origin == "generated" and not str(program.metadata.get("purpose", "")).strip():
        return ValidationReport(False, False, False,
                                [Violation("missing_purpose", "metadata", "generated program lacks purpose").as_dict()], fp)
    static = check_static(program.kind, program.parameters, env.caps(), max_new_replicas)
    if static:
        return ValidationReport(True, False, False, [v.as_dict() for v in static], fp)
    failures: list[dict] = []
    trial, base = snapshot(env), snapshot(env)
    try:
        apply_effect(program, trial)
    except (InvariantViolation, KeyError, ValueError) as exc:
        return ValidationReport(True, True, False, [{"code": "sandbox_error", "field": "", "message": str(exc)}], fp)
    problems = trial.check_invariants()
    a_with = a_without = None
    if not problems and not env.terminated:
        _, o_with = advance_step(trial)
        _, o_without = advance_step(base)
        problems = trial.check_invariants()
        a_with, a_without = o_with.availability, o_without.availability
        if a_with < a_without - tolerance:
            failures.append({"code": "availability_regression", "field": "",
                             "message": f"availability {a_with:.4f} < {a_without:.4f} without the action"})
    failures.extend({"code": "invariant_breach", "field": "", "message": m} for m in problems)
    return ValidationReport(True, True, not failures, failures, fp, a_with, a_without)


def execute(
    program: ActionProgram,
    env: EnvState,
    report: Optional[ValidationReport],
    reasoner_latency: float = 0.0,
) -> tuple[EnvState, ExecutionRecord]:
    if report is None or not report.deployable:
        raise ContractViolation(f"{program.kind} has no passing validation report")
    if report.fingerprint != fingerprint(program, env):
        raise ContractViolation(f"validation report for {program.kind} is stale or for another environment")
    start = time.perf_counter()
    pods_before = env.service.active_pods
    apply_effect(program, env)
    latency = time.perf_counter() - start + reasoner_latency
    rec = ExecutionRecord(program.kind, dict(program.parameters), program.origin, latency,
                          env.service.active_pods - pods_before, reasoner_latency)
    return env, rec


# -- plan deployment ------------------------------------------------------------

@dataclass
class StepResult:
    action: dict
    program: Optional[ActionProgram]
    report: Optional[ValidationReport]
    record: ExecutionRecord


def deploy_plan(
    actions: Sequence[Any],
    env: EnvState,
    library: DefenseLibrary,
    reasoner: Reasoner,
    constraints: Any = None,
    ledger: Optional[CostLedger] = None,
    audit_dir: Optional[Union[str, os.PathLike]] = None,
    retries: int = REPAIR_RETRIES,
) -> list[StepResult]:
    """Resolve, validate and execute each plan action in order; failed steps are recorded, not raised."""
    results = []
    max_new = getattr(constraints, "max_new_replicas", None)
    for i, action in enumerate(actions):
        kind, params = action.action_kind, dict(action.parameters)
        start = time.perf_counter()
        found = library.match(kind, params)
        gen_latency = 0.0
        if isinstance(found, ActionProgram):
            program = found
        else:
            mark = len(ledger.calls) if ledger is not None else 0
            try:
                program = generate_program(describe(kind, params), {"scenario": env.config.scenario,
                                                                    "replicas": env.service.active_replicas},
                                           constraints, reasoner, retries, env.caps(), ledger)
            except GenerationError as exc:
                rec = ExecutionRecord(kind, params, "generated", time.perf_counter() - start, 0, ok=False,
                                      error=str(exc))
                results.append(StepResult(action.to_dict(), None, None, rec))
                continue
            gen_latency = ledger.since(mark).latency if ledger is not None else 0.0
        report = validate_program(program, env, 0.0, max_new)
        if not report.deployable:
            rec = ExecutionRecord(program.kind, program.parameters, program.origin, time.perf_counter() - start, 0,
                                  gen_latency, ok=False, error=json.dumps(report.failures[:3]))
            results.append(StepResult(action.to_dict(), program, report, rec))
            continue
        _, rec = execute(program, env, report, gen_latency)
        rec.latency = time.perf_counter() - start + gen_latency
        if audit_dir is not None:
            d = Path(audit_dir)
            d.mkdir(parents=True, exist_ok=True)
            name = f"ep{env.clock.episode:03d}_r{env.clock.round:03d}_{i:02d}_{program.kind}.sh"
            (d / name).write_text(program.audit_script(), encoding="utf-8")
        results.append(StepResult(action.to_dict(), program, report, rec))
    return results
