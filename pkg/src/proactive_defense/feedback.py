"""Round evaluation, episode endpoints and the two-layer plan memory.

Memory file schema, version 1 (JSON)::

    {
      "schema_version": 1,
      "window": int,
      "inter": [{
        "episode_id": int,
        "outcome": "success" | "failure",
        "attack": str,
        "buckets": [str, ...],
        "rationale": str,
        "sequence": [{"round": int, "context": str, "signature": [str, ...],
                      "label": str, "flag": "success" | "failure", "carried"?: true}]
      }]
    }
"""
from __future__ import annotations

import enum
import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .config import DIMENSIONS, ConfigError, Weights
from .env import EnvState, RoundLabel, StepOutcome, Termination, check_termination

MEMORY_VERSION = 1
DEFAULT_WINDOW = 5
COST_REF = 0.01


class Verdict(str, enum.Enum):
    CONTINUE = "continue"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass
class EvaluationVector:
    """Raw dimension values plus their [0, 1] normalizations (higher is better).

    security: final availability relative to the survival threshold, capped at 1
    recovery_time: steps until the first surviving step; norm 1/(1+steps)
    resource: pool fraction newly consumed; norm 1 - fraction
    financial_cost: currency spent on reasoning; norm 1/(1+cost/cost_ref)
    qos: mean availability over the round
    """

    security: float
    recovery_time: int
    resource: float
    financial_cost: float
    qos: float
    norms: dict = field(default_factory=dict)
    weighted_score: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _weights(weights: Any) -> dict[str, float]:
    if isinstance(weights, Weights):
        weights.validate()
        return weights.as_dict()
    w = {d: float(weights[d]) for d in DIMENSIONS}
    Weights(**w).validate()
    return w


def weighted_score(norms: Mapping[str, float], weights: Any) -> float:
    w = _weights(weights)
    return sum(w[d] * float(norms[d]) for d in DIMENSIONS)


def evaluate(
    before: EnvState,
    after: EnvState,
    execution_records: Sequence[Any],
    weights: Any,
    outcomes: Sequence[StepOutcome] = (),
    cost: float = 0.0,
    cost_ref: float = COST_REF,
) -> EvaluationVector:
    w = _weights(weights)
    cfg = after.config
    avail = [o.availability for o in outcomes]
    if avail:
        security = min(1.0, avail[-1] / cfg.survive_threshold)
        recovery = next((i for i, o in enumerate(outcomes) if o.survived), len(outcomes))
        qos = sum(avail) / len(avail)
    else:
        security, recovery, qos = 1.0, 0, 1.0
    new_pods = max(0, after.service.active_pods - before.service.active_pods)
    resource = new_pods / cfg.pod_pool
    norms = {
        "security": security,
        "recovery_time": 1.0 / (1.0 + recovery),
        "resource": 1.0 - resource,
        "financial_cost": 1.0 / (1.0 + cost / cost_ref),
        "qos": qos,
    }
    score = sum(w[d] * norms[d] for d in DIMENSIONS)
    return EvaluationVector(security, recovery, resource, cost, qos, norms, score)


def endpoint_check(round_history: Iterable, window: int = 5) -> Verdict:
    t = check_termination(round_history, window)
    if t is Termination.SECURE_END:
        return Verdict.SUCCESS
    if t is Termination.COMPROMISED_END:
        return Verdict.FAILURE
    return Verdict.CONTINUE


def _flag(label: Any) -> bool:
    return RoundLabel(label) is RoundLabel.SECURE


class EpisodeMemory:
    """Intra-episode round log plus a sliding window of summarized past episodes.

    A (context, plan signature) pair is judged by its most recent round
    outcome, searching the current episode first. Past failures that were
    consulted during an episode are carried into that episode's summary, so
    a lesson in use does not slide out of the window. With
    ``use_inter=False`` past episodes are retained but not consulted.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, use_inter: bool = True):
        if window < 1:
            raise ConfigError("memory window must be >= 1")
        self.window = window
        self.use_inter = use_inter
        self.intra: list[dict] = []
        self.inter: deque = deque(maxlen=window)
        self._carried: set = set()

    # -- writes ---------------------------------------------------------------
    def log_round(self, round_id: int, context: str, signature: Sequence[str], label: Any,
                  plan: Optional[dict] = None, validation: Optional[list] = None,
                  execution_records: Optional[list] = None, evaluation: Optional[dict] = None,
                  lessons: str = "") -> None:
        self.intra.append({
            "round": round_id, "context": context, "signature": list(signature),
            "label": RoundLabel(label).value, "flag": "success" if _flag(label) else "failure",
            "plan": plan, "validation": validation or [], "execution_records": execution_records or [],
            "evaluation": evaluation, "lessons": lessons,
        })

    def finalize(self, verdict: Verdict, episode_id: int, attack: str = "") -> None:
        if verdict not in (Verdict.SUCCESS, Verdict.FAILURE):
            raise ValueError("episodes finalize only as success or failure")
        acted = [r for r in self.intra if r["signature"]]
        seen = {(r["context"], tuple(r["signature"])) for r in acted}
        carried = [{"round": 0, "context": c, "signature": list(sig), "label": RoundLabel.COMPROMISED.value,
                    "flag": "failure", "carried": True}
                   for c, sig in sorted(self._carried) if (c, sig) not in seen]
        self.inter.append({
            "episode_id": episode_id,
            "outcome": verdict.value,
            "attack": attack,
            "buckets": sorted({r["context"].split(":")[-1] for r in self.intra}),
            "rationale": "; ".join(r["lessons"] for r in acted if r["lessons"])[:2000],
            "sequence": carried + [{k: r[k] for k in ("round", "context", "signature", "label", "flag")}
                                   for r in acted],
        })
        self.intra = []
        self._carried = set()

    # -- reads ----------------------------------------------------------------
    def _rows(self) -> Iterable[tuple[dict, bool]]:
        """(row, from_past_episode), newest first: current episode, then past episodes."""
        for r in reversed(self.intra):
            yield r, False
        if self.use_inter:
            for ep in reversed(self.inter):
                for r in reversed(ep["sequence"]):
                    yield r, True

    def flag(self, context: str, signature: Sequence[str]) -> Optional[bool]:
        sig = list(signature)
        for r, past in self._rows():
            if r["context"] == context and r["signature"] == sig:
                ok = r["flag"] == "success"
                if past and not ok:
                    # a lesson this episode relied on; carried into its summary
                    self._carried.add((context, tuple(sig)))
                return ok
        return None

    def tally(self, context: str, signature: Sequence[str]) -> tuple[int, int]:
        sig = list(signature)
        s = f = 0
        for r, _ in self._rows():
            if r["context"] == context and r["signature"] == sig and not r.get("carried"):
                if r["flag"] == "success":
                    s += 1
                else:
                    f += 1
        return s, f

    def signatures(self, context: str, success: bool) -> list[tuple]:
        latest: dict[tuple, bool] = {}
        for r, _ in self._rows():
            if r["context"] == context and r["signature"]:
                latest.setdefault(tuple(r["signature"]), r["flag"] == "success")
        return sorted(k for k, v in latest.items() if v == success)

    def snapshot(self) -> "EpisodeMemory":
        """Copy-on-read view for the decision stage."""
        m = EpisodeMemory(self.window, self.use_inter)
        m.intra = [dict(r) for r in self.intra]
        m.inter = deque((dict(e) for e in self.inter), maxlen=self.window)
        m._carried = set(self._carried)
        return m

    # -- persistence ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {"schema_version": MEMORY_VERSION, "window": self.window, "inter": list(self.inter)}

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, os.PathLike], use_inter: bool = True) -> "EpisodeMemory":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema_version") != MEMORY_VERSION:
            raise ValueError(f"unsupported memory schema {data.get('schema_version')!r}")
        m = cls(int(data["window"]), use_inter)
        for e in data["inter"]:
            m.inter.append(e)
        return m


def finalize_episode(memory: EpisodeMemory, verdict: Verdict, episode_id: int = 0, attack: str = "") -> EpisodeMemory:
    memory.finalize(verdict, episode_id, attack)
    return memory
