"""Backend interface, usage accounting and configuration shared by all reasoners."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Optional, Protocol

from ..config import ConfigError

ROLES = ("profile", "collector", "analyzer", "decision", "deployer", "feedback")
PROMPT_VERSION = "1"


class ReasonerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    cost: float = 0.0


@dataclass
class Completion:
    response: dict
    usage: Usage
    raw: str = ""


# (temperature, top_p) per evaluated model
MODEL_PRESETS = {
    "gpt-4o-mini": (1.0, 1.0),
    "deepseek-r1-distill-qwen-32b": (0.6, 0.95),
    "qwen3-32b": (0.7, 0.8),
}


@dataclass(frozen=True)
class ReasonerConfig:
    backend: str = "oracle"
    model_name: str = "gpt-4o-mini"
    temperature: float = 1.0
    top_p: float = 1.0
    endpoint: str = "http://127.0.0.1:8000/v1/chat/completions"
    price_input: float = 0.0
    price_output: float = 0.0
    timeout: float = 30.0
    retries: int = 2
    api_key_env: str = "REASONER_API_KEY"
    transcript_path: Optional[str] = None

    @classmethod
    def preset(cls, model_name: str, **overrides: Any) -> "ReasonerConfig":
        if model_name not in MODEL_PRESETS:
            raise ConfigError(f"no preset for model {model_name!r}")
        t, p = MODEL_PRESETS[model_name]
        return cls(**{"backend": "remote", "model_name": model_name, "temperature": t, "top_p": p, **overrides})

    def validate(self) -> "ReasonerConfig":
        if self.backend not in ("oracle", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature {self.temperature} outside 0..2")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p {self.top_p} outside (0, 1]")
        if self.retries < 0 or self.timeout <= 0:
            raise ConfigError("retries must be >= 0 and timeout > 0")
        if self.price_input < 0 or self.price_output < 0:
            raise ConfigError("prices must be non-negative")
        return self

    def cost(self, input_tokens: int, output_tokens: int) -> float:
        return input_tokens * self.price_input + output_tokens * self.price_output


class Reasoner(Protocol):
    def complete(self, role_prompt: str, payload: Mapping[str, Any], schema: Mapping[str, Any]) -> Completion:
        ...


@dataclass
class CostLedger:
    """Per-call usage log; totals are exact sums of the logged entries."""

    calls: list = field(default_factory=list)

    def add(self, stage: str, usage: Usage) -> None:
        self.calls.append((stage, usage))

    @property
    def input_tokens(self) -> int:
        return sum(u.input_tokens for _, u in self.calls)

    @property
    def output_tokens(self) -> int:
        return sum(u.output_tokens for _, u in self.calls)

    @property
    def cost(self) -> float:
        return math.fsum(u.cost for _, u in self.calls)

    @property
    def latency(self) -> float:
        return math.fsum(u.latency for _, u in self.calls)

    def since(self, mark: int) -> "CostLedger":
        return CostLedger(self.calls[mark:])


@functools.lru_cache(maxsize=None)
def load_prompt(role: str) -> str:
    if role not in ROLES:
        raise ReasonerError(f"no prompt template for role {role!r}")
    return resources.files(__package__).joinpath("prompts", f"{role}.txt").read_text(encoding="utf-8")


def role_prompt(role: str) -> str:
    """System prompt for a stage: shared profile followed by the stage template."""
    return load_prompt("profile").rstrip() + "\n\n" + load_prompt(role)
