"""Reasoning backends: a deterministic rule oracle and a remote chat-completions client."""
from __future__ import annotations

from . import schemas
from .base import (
    MODEL_PRESETS,
    ROLES,
    Completion,
    CostLedger,
    Reasoner,
    ReasonerConfig,
    ReasonerError,
    Usage,
    load_prompt,
    role_prompt,
)
from .oracle import OracleReasoner
from .remote import RemoteReasoner, strip_fences


def make_reasoner(cfg: ReasonerConfig) -> Reasoner:
    cfg.validate()
    if cfg.backend == "oracle":
        return OracleReasoner()
    return RemoteReasoner(cfg)


__all__ = [
    "MODEL_PRESETS", "ROLES", "Completion", "CostLedger", "OracleReasoner", "Reasoner", "ReasonerConfig",
    "ReasonerError", "RemoteReasoner", "Usage", "load_prompt", "make_reasoner", "role_prompt", "schemas",
    "strip_fences",
]
