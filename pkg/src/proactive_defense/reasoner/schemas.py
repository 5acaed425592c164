"""Per-stage JSON schemas for structured reasoner responses."""
from __future__ import annotations

from typing import Any, Mapping

import jsonschema

from ..config import DIMENSIONS

_unit = {"type": "number", "minimum": 0, "maximum": 1}

COLLECTOR = {
    "title": "collector",
    "type": "object",
    "required": ["classes"],
    "properties": {
        "classes": {"type": "object", "additionalProperties": {"enum": ["alert", "metric", "irrelevant"]}},
    },
}

ASSESSMENT = {
    "title": "assessment",
    "type": "object",
    "required": ["scope_sub", "impact_sub", "duration_sub", "attack_hypothesis", "rationale"],
    "properties": {
        "scope_sub": {"type": "integer", "minimum": 0, "maximum": 3},
        "impact_sub": {"type": "integer", "minimum": 0, "maximum": 4},
        "duration_sub": {"type": "integer", "minimum": 0, "maximum": 3},
        "attack_hypothesis": {"enum": ["syn_flood", "slow_http", "memory_dos", "unknown"]},
        "rationale": {"type": "string"},
    },
}

ACTION = {
    "type": "object",
    "required": ["action_kind", "parameters"],
    "properties": {
        "action_kind": {"type": "string"},
        "parameters": {"type": "object"},
        "target": {"type": ["string", "null"]},
        "expected_effect": {"type": "string"},
    },
}

PLAN = {
    "title": "plan",
    "type": "object",
    "required": ["candidates", "rationale"],
    "properties": {
        "recommended": {"type": ["string", "null"]},
        "rationale": {"type": "string"},
        "candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["strategy", "actions", "estimates"],
                "properties": {
                    "strategy": {"type": "string"},
                    "actions": {"type": "array", "items": ACTION},
                    "estimates": {
                        "type": "object",
                        "required": list(DIMENSIONS),
                        "properties": {d: _unit for d in DIMENSIONS},
                    },
                    "rationale": {"type": "string"},
                },
            },
        },
    },
}

PROGRAM = {
    "title": "program",
    "type": "object",
    "required": ["kind", "parameters", "purpose"],
    "properties": {
        "kind": {"type": "string"},
        "parameters": {"type": "object"},
        "purpose": {"type": "string", "minLength": 1},
        "script": {"type": "string"},
    },
}

EVALUATION = {
    "title": "evaluation",
    "type": "object",
    "required": ["success", "lessons"],
    "properties": {
        "success": {"type": "boolean"},
        "lessons": {"type": "string"},
        "failure_reasons": {"type": "array", "items": {"type": "string"}},
    },
}

BY_TITLE = {s["title"]: s for s in (COLLECTOR, ASSESSMENT, PLAN, PROGRAM, EVALUATION)}


_VALIDATORS: dict[int, jsonschema.Draft7Validator] = {}


def schema_errors(instance: Any, schema: Mapping[str, Any]) -> list[str]:
    validator = _VALIDATORS.get(id(schema))
    if validator is None or validator.schema is not schema:
        validator = _VALIDATORS[id(schema)] = jsonschema.Draft7Validator(schema)
    return [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in validator.iter_errors(instance)]
