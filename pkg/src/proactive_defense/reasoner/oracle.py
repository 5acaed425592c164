"""Deterministic rule-table reasoner.

Every response is a pure function of the payload: the same payload always
yields the same response, at zero cost and zero latency.
"""
from __future__ import annotations

import json
import re
from typing import Any, Callable, Mapping

from .. import analyzer
from ..collector import classify
from ..dsl import render_script
from .base import Completion, ReasonerError, Usage
from .schemas import schema_errors

# strategy -> prior estimates (security, recovery_time, resource, financial_cost, qos)
FLOOD_STRATEGIES = {
    "address_shuffle": (0.85, 0.90, 1.00, 1.00, 0.90),
    "filter": (0.90, 0.80, 0.80, 0.90, 0.95),
    "rate_limit": (0.80, 0.70, 1.00, 0.95, 0.85),
    "scale_only": (0.50, 0.60, 0.50, 0.70, 0.80),
}
MEMORY_STRATEGIES = {
    "migrate_victim": (0.85, 0.95, 1.00, 1.00, 0.90),
    "throttle_contenders": (0.80, 0.85, 1.00, 0.90, 0.85),
    "isolate_contenders": (0.90, 0.80, 0.90, 0.90, 0.90),
}
RECOMMENDED = {"syn_flood": "filter", "slow_http": "filter", "memory_dos": "isolate_contenders"}
RATE_LIMIT = 20
SCALE_STEP = 2
THROTTLE_CAP = 2.0
DIMS = ("security", "recovery_time", "resource", "financial_cost", "qos")


def _act(kind: str, params: dict, target: Any, effect: str) -> dict:
    return {"action_kind": kind, "parameters": params, "target": target, "expected_effect": effect}


def _flood_candidates(hyp: str, state: Mapping[str, Any], constraints: Mapping[str, Any]) -> dict[str, list]:
    offenders = list(state.get("offenders", []))
    stale = state.get("half_open", 0) if hyp == "syn_flood" else state.get("slow", 0)
    loss = float(state.get("availability_loss", 0.0))
    max_new = int(constraints.get("max_new_replicas", 0))
    recycle = [_act("recycle_half_open", {"min_age": 0}, "service", "free slots held by hostile connections")] if stale else []
    scale = []
    if loss > 0 and max_new > 0:
        d = min(SCALE_STEP, max_new)
        scale = [_act("scale_replicas", {"delta": d}, "service", f"add {d} replicas of headroom")]
    if not (offenders or stale or loss > 0):
        return {}
    out = {
        "address_shuffle": [_act("shuffle_address", {}, "service", "invalidate attacker reconnaissance")]
        if offenders else [],
        "filter": [_act("block_source", {"ip": ip}, ip, "drop all traffic from the offender") for ip in offenders]
        + recycle + scale,
        "rate_limit": [_act("rate_limit", {"ip": ip, "max_per_step": RATE_LIMIT}, ip, "cap offender connection rate")
                       for ip in offenders] + recycle,
        "scale_only": [_act("scale_replicas", {"delta": max_new}, "service", "absorb the flood with capacity")]
        if max_new > 0 and loss > 0 else [],
    }
    if not offenders:
        out["filter"] = recycle + scale
        out["rate_limit"] = []
    return out


def _memory_candidates(state: Mapping[str, Any]) -> dict[str, list]:
    contenders = list(state.get("contenders", []))
    victim = state.get("victim") or {}
    target = state.get("target_machine")
    loss = float(state.get("availability_loss", 0.0))
    if not contenders and loss <= 0:
        return {}
    migrate = []
    if victim.get("vm_id") and target is not None and loss > 0:
        migrate = [_act("migrate_vm", {"vm_id": victim["vm_id"], "target_machine": int(target)}, victim["vm_id"],
                        "move the workload away from contending neighbours")]
    return {
        "migrate_victim": migrate,
        "throttle_contenders": [_act("throttle_vm", {"vm_id": vm, "cap": THROTTLE_CAP}, vm, "cap contender bandwidth")
                                for vm in contenders],
        "isolate_contenders": [_act("isolate_vm", {"vm_id": vm}, vm, "quarantine the contender") for vm in contenders],
    }


def plan_response(payload: Mapping[str, Any]) -> dict:
    a = payload.get("assessment", {})
    hyp = a.get("attack_hypothesis", "unknown")
    state = payload.get("state", {})
    constraints = payload.get("constraints", {})
    if hyp in ("syn_flood", "slow_http"):
        actions, priors = _flood_candidates(hyp, state, constraints), FLOOD_STRATEGIES
    elif hyp == "memory_dos":
        actions, priors = _memory_candidates(state), MEMORY_STRATEGIES
    else:
        max_new = int(constraints.get("max_new_replicas", 0))
        loss = float(state.get("availability_loss", 0.0))
        acts = [_act("scale_replicas", {"delta": min(SCALE_STEP, max_new)}, "service", "add headroom")] \
            if loss > 0 and max_new > 0 else []
        actions, priors = {"scale_only": acts}, {"scale_only": FLOOD_STRATEGIES["scale_only"]}
    candidates = [
        {"strategy": name, "actions": acts, "estimates": dict(zip(DIMS, priors[name])),
         "rationale": f"{name} against {hyp}"}
        for name, acts in actions.items() if acts
    ]
    names = [c["strategy"] for c in candidates]
    rec = RECOMMENDED.get(hyp)
    return {
        "recommended": rec if rec in names else (names[0] if names else None),
        "candidates": candidates,
        "rationale": f"rule table for {hyp} at risk {a.get('risk_score', 0)}",
    }


def assessment_response(payload: Mapping[str, Any]) -> dict:
    scope = analyzer.scope_subscore(float(payload.get("affected_fraction", 0.0)))
    impact = analyzer.impact_subscore(float(payload.get("availability_loss", 0.0)))
    duration = analyzer.duration_subscore(int(payload.get("rounds_under_attack", 0)))
    hyp = payload.get("detected_hypothesis", "unknown")
    return {
        "scope_sub": scope, "impact_sub": impact, "duration_sub": duration,
        "attack_hypothesis": hyp if hyp in analyzer.HYPOTHESES else "unknown",
        "rationale": f"mapping tables: scope {scope}, impact {impact}, duration {duration}",
    }


_IP = r"(\d{1,3}(?:\.\d{1,3}){3})"
_VM = r"([\w.-]+)"
_PATTERNS: list[tuple[re.Pattern, Callable[[re.Match], tuple[str, dict]]]] = [
    (re.compile(rf"rate-?\s?limit\b.*?\bip {_IP}\D*?(\d+)", re.I),
     lambda m: ("rate_limit", {"ip": m[1], "max_per_step": int(m[2])})),
    (re.compile(rf"block\b.*?\bip {_IP}", re.I), lambda m: ("block_source", {"ip": m[1]})),
    (re.compile(r"recycle\b(?:.*?older than (\d+))?", re.I),
     lambda m: ("recycle_half_open", {"min_age": int(m[1] or 0)})),
    (re.compile(r"scale\b.*?by ([+-]?\d+)", re.I), lambda m: ("scale_replicas", {"delta": int(m[1])})),
    (re.compile(r"shuffle", re.I), lambda m: ("shuffle_address", {})),
    (re.compile(rf"migrate virtual machine {_VM} to machine (\d+)", re.I),
     lambda m: ("migrate_vm", {"vm_id": m[1], "target_machine": int(m[2])})),
    (re.compile(rf"throttle\b.*?virtual machine {_VM} to (\d+(?:\.\d+)?)", re.I),
     lambda m: ("throttle_vm", {"vm_id": m[1], "cap": float(m[2])})),
    (re.compile(rf"isolate virtual machine {_VM}", re.I), lambda m: ("isolate_vm", {"vm_id": m[1]})),
]


def program_response(payload: Mapping[str, Any]) -> dict:
    text = str(payload.get("objective", ""))
    for pattern, build in _PATTERNS:
        m = pattern.search(text)
        if m:
            kind, params = build(m)
            return {"kind": kind, "parameters": params, "purpose": text.strip(),
                    "script": render_script(kind, params)}
    return {"kind": "noop", "parameters": {}, "purpose": f"no rule matched: {text.strip()}"[:200] or "noop",
            "script": render_script("noop", {})}


def evaluation_response(payload: Mapping[str, Any]) -> dict:
    label = payload.get("label")
    ok = label == "secure"
    reasons = [] if ok else [f"round labelled {label}"]
    plan = payload.get("plan_signature") or []
    lesson = f"{'keep' if ok else 'avoid'} plan {'+'.join(plan) or 'none'} in context {payload.get('context')}"
    return {"success": ok, "lessons": lesson, "failure_reasons": reasons}


def collector_response(payload: Mapping[str, Any]) -> dict:
    return {"classes": {name: classify(name) for name in payload.get("events", [])}}


HANDLERS = {
    "collector": collector_response,
    "assessment": assessment_response,
    "plan": plan_response,
    "program": program_response,
    "evaluation": evaluation_response,
}


class OracleReasoner:
    """Answers from rule tables; dispatches on the response schema title."""

    def complete(self, role_prompt: str, payload: Mapping[str, Any], schema: Mapping[str, Any]) -> Completion:
        handler = HANDLERS.get(schema.get("title", ""))
        if handler is None:
            raise ReasonerError(f"oracle has no rules for schema {schema.get('title')!r}")
        response = handler(payload)
        errors = schema_errors(response, schema)
        if errors:
            raise ReasonerError(f"oracle response failed its schema: {errors[:3]}")
        return Completion(response, Usage(), json.dumps(response, sort_keys=True))
