"""The closed defense-action vocabulary: kinds, parameter schemas, static rules.

Both the decision stage (candidate validation) and the deployer (program
validation) check actions here, so a plan that passes one passes the other
against the same environment caps.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .env import VICTIM, EnvCaps

# kind -> {param: (type, lo, hi)}; lo/hi bound ints and floats, None = unbounded
SCHEMAS: dict[str, dict[str, tuple]] = {
    "block_source": {"ip": ("ip", None, None)},
    "rate_limit": {"ip": ("ip", None, None), "max_per_step": ("int", 1, 100_000)},
    "recycle_half_open": {"min_age": ("int", 0, 1000)},
    "scale_replicas": {"delta": ("int", -100, 100)},
    "shuffle_address": {},
    "migrate_vm": {"vm_id": ("str", None, None), "target_machine": ("int", 0, 10_000)},
    "throttle_vm": {"vm_id": ("str", None, None), "cap": ("float", 0.0, 100.0)},
    "isolate_vm": {"vm_id": ("str", None, None)},
    "noop": {},
    "generated": {"name": ("str", None, None), "steps": ("steps", None, None)},
}
KINDS = tuple(SCHEMAS)
PRIMITIVES = tuple(k for k in KINDS if k != "generated")

# which decomposed subtask each kind serves
OBJECTIVE_OF = {
    "block_source": "block_sources",
    "rate_limit": "block_sources",
    "shuffle_address": "block_sources",
    "recycle_half_open": "recycle_half_open",
    "scale_replicas": "scale_out",
    "migrate_vm": "evict_contender",
    "throttle_vm": "evict_contender",
    "isolate_vm": "evict_contender",
    "noop": "monitor",
}


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str

    def as_dict(self) -> dict:
        return {"code": self.code, "field": self.field, "message": self.message}


def _is_ip(value: Any) -> bool:
    if not isinstance(value, str):
        return False
    try:
        ipaddress.IPv4Address(value)
    except ValueError:
        return False
    return True


def schema_signature(kind: str, params: Mapping[str, Any]) -> tuple:
    return (kind, tuple(sorted(params)))


def check_syntax(kind: Any, params: Any) -> list[Violation]:
    """Well-formedness: known kind, exact parameter set, parameter types."""
    if not isinstance(kind, str) or kind not in SCHEMAS:
        return [Violation("unknown_kind", "kind", f"unknown action kind {kind!r}")]
    if not isinstance(params, Mapping):
        return [Violation("bad_parameters", "parameters", "parameters must be an object")]
    schema = SCHEMAS[kind]
    out = []
    missing = set(schema) - set(params)
    extra = set(params) - set(schema)
    for name in sorted(missing):
        out.append(Violation("missing_parameter", name, f"{kind} requires {name!r}"))
    for name in sorted(extra):
        out.append(Violation("unexpected_parameter", name, f"{kind} takes no {name!r}"))
    for name, (typ, _, _) in schema.items():
        if name not in params:
            continue
        value = params[name]
        ok = {
            "ip": lambda v: isinstance(v, str),
            "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "str": lambda v: isinstance(v, str) and bool(v),
            "steps": lambda v: isinstance(v, list) and bool(v),
        }[typ](value)
        if not ok:
            out.append(Violation("bad_type", name, f"{name}={value!r} is not a valid {typ}"))
    if kind == "generated" and not out:
        for i, step in enumerate(params["steps"]):
            if not isinstance(step, Mapping) or step.get("kind") not in PRIMITIVES:
                out.append(Violation("bad_step", f"steps[{i}]", "steps must be primitive actions"))
                continue
            for v in check_syntax(step["kind"], step.get("parameters", {})):
                out.append(Violation(v.code, f"steps[{i}].{v.field}", v.message))
    return out


def check_static(
    kind: str,
    params: Mapping[str, Any],
    caps: Optional[EnvCaps],
    max_new_replicas: Optional[int] = None,
) -> list[Violation]:
    """Range checks and forbidden effects. Assumes :func:`check_syntax` passed."""
    out: list[Violation] = []
    if kind == "generated":
        for i, step in enumerate(params["steps"]):
            for v in check_static(step["kind"], step.get("parameters", {}), caps, max_new_replicas):
                out.append(Violation(v.code, f"steps[{i}].{v.field}", v.message))
        return out
    for name, (typ, lo, hi) in SCHEMAS[kind].items():
        value = params[name]
        if typ == "ip" and not _is_ip(value):
            out.append(Violation("bad_ip", name, f"{value!r} is not an IPv4 address"))
        if lo is not None and value < lo:
            out.append(Violation("out_of_range", name, f"{name}={value} < {lo}"))
        if hi is not None and value > hi:
            out.append(Violation("out_of_range", name, f"{name}={value} > {hi}"))
    if caps is None:
        return out
    if kind in ("block_source", "rate_limit") and params.get("ip") in caps.allowlist:
        out.append(Violation("forbidden_effect", "ip", f"{params['ip']} is an allowlisted client"))
    if kind == "scale_replicas":
        delta = params["delta"]
        target = caps.active_replicas + delta
        if delta == 0:
            out.append(Violation("no_effect", "delta", "delta must be non-zero"))
        if target < 1:
            out.append(Violation("forbidden_effect", "delta", f"would scale to {target} < 1 replica"))
        if target > caps.max_replicas:
            out.append(Violation("replica_cap", "delta", f"would exceed {caps.max_replicas} replicas"))
        if target * caps.pods_per_replica > caps.pod_pool:
            out.append(Violation("pod_pool", "delta", f"would exceed pool of {caps.pod_pool} pods"))
        if max_new_replicas is not None and delta > max_new_replicas:
            out.append(Violation("resource_constraint", "delta", f"{delta} > allowed {max_new_replicas} new replicas"))
    if kind in ("migrate_vm", "throttle_vm", "isolate_vm"):
        vm = params["vm_id"]
        if vm not in caps.vm_hosts:
            out.append(Violation("unknown_vm", "vm_id", f"no VM {vm!r}"))
        elif caps.vm_hosts[vm] < 0:
            out.append(Violation("forbidden_effect", "vm_id", f"{vm} is quarantined"))
        if kind in ("throttle_vm", "isolate_vm") and vm == VICTIM:
            out.append(Violation("forbidden_effect", "vm_id", "never throttle or isolate the protected workload"))
    if kind == "migrate_vm":
        m = params["target_machine"]
        if not 0 <= m < caps.machines:
            out.append(Violation("out_of_range", "target_machine", f"machine {m} outside 0..{caps.machines - 1}"))
        elif caps.vm_hosts.get(params["vm_id"]) != m and caps.machine_loads[m] >= caps.vms_per_machine:
            out.append(Violation("machine_full", "target_machine", f"machine {m} already hosts {caps.machine_loads[m]} VMs"))
    return out


def render_script(kind: str, params: Mapping[str, Any], log: str = "/var/log/defense.log") -> str:
    """Human-readable shell rendering for the audit log. Never executed."""
    head = "#!/bin/bash\nset -euo pipefail\n"
    if kind == "block_source":
        body = (f'SRC="{params["ip"]}"\niptables -A INPUT -s "$SRC" -j DROP\n'
                f'echo "$(date -u +%FT%TZ) drop rule installed for $SRC" >> {log}\n')
    elif kind == "rate_limit":
        body = (f'SRC="{params["ip"]}"\n'
                f'iptables -A INPUT -s "$SRC" -p tcp --syn -m limit --limit {params["max_per_step"]}/min -j ACCEPT\n'
                f'iptables -A INPUT -s "$SRC" -p tcp --syn -j DROP\n'
                f'echo "$(date -u +%FT%TZ) rate limit {params["max_per_step"]} for $SRC" >> {log}\n')
    elif kind == "recycle_half_open":
        body = ("ss -K state syn-recv\n"
                f"# close idle long-lived connections older than {params['min_age']} steps\n"
                f'echo "$(date -u +%FT%TZ) recycled stale connections" >> {log}\n')
    elif kind == "scale_replicas":
        body = (f"kubectl scale deployment/web --replicas=+{params['delta']}\n" if params["delta"] > 0
                else f"kubectl scale deployment/web --replicas={params['delta']}\n")
    elif kind == "shuffle_address":
        body = f'NEW_VIP=$(next-vip)\nupdate-service-address "$NEW_VIP"\necho "$(date -u +%FT%TZ) address rotated" >> {log}\n'
    elif kind == "migrate_vm":
        body = f"virsh migrate --live {params['vm_id']} qemu+ssh://machine-{params['target_machine']}/system\n"
    elif kind == "throttle_vm":
        body = f"virsh blkiotune {params['vm_id']} --weight 100\nvirsh memtune {params['vm_id']} --hard-limit {params['cap']}\n"
    elif kind == "isolate_vm":
        body = f"virsh suspend {params['vm_id']}\nmove-to-quarantine {params['vm_id']}\n"
    elif kind == "generated":
        parts = [render_script(s["kind"], s.get("parameters", {}), log).replace(head, "") for s in params["steps"]]
        body = f"# generated: {params['name']}\n" + "".join(parts)
    else:
        body = ":\n"
    return head + body


def describe(kind: str, params: Mapping[str, Any]) -> str:
    """Natural-language objective for a primitive, as sent to program generation."""
    if kind == "block_source":
        return f"block all incoming traffic from IP {params['ip']}, and log this action"
    if kind == "rate_limit":
        return f"rate-limit new connections from IP {params['ip']} to {params['max_per_step']} per step"
    if kind == "recycle_half_open":
        return f"recycle half-open and idle long-lived connections older than {params['min_age']} steps"
    if kind == "scale_replicas":
        return f"scale the service replicas by {params['delta']:+d}"
    if kind == "shuffle_address":
        return "shuffle the service address to invalidate attacker reconnaissance"
    if kind == "migrate_vm":
        return f"migrate virtual machine {params['vm_id']} to machine {params['target_machine']}"
    if kind == "throttle_vm":
        return f"throttle memory bandwidth of virtual machine {params['vm_id']} to {params['cap']:g}"
    if kind == "isolate_vm":
        return f"isolate virtual machine {params['vm_id']} from the shared host"
    return "take no action"
