"""Trial runner: independent seeded trials of the defense pipeline, with JSON-serializable results.

Trial result record (JSON)::

    {
      "trial": int, "seed": int, "scenario": str, "backend": str,
      "errored": bool, "error": str | null,
      "calls": int, "failed_calls": int,
      "episodes": [{
        "episode": int, "verdict": "success" | "failure", "rounds": int,
        "steps_to_success": int | null, "survived": [bool, ...],
        "stage_ok": [{"collector": bool, "analyzer": bool, "decision": bool,
                      "deployer": bool, "feedback": bool}, ...],
        "action_latencies": [float, ...], "cost": float,
        "input_tokens": int, "output_tokens": int
      }]
    }

Trace file (JSON lines): one object per round with ``trial``, ``episode``
and the fields of :class:`~proactive_defense.pipeline.RoundTrace`.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from ..config import ConfigError, ScenarioConfig, Weights
from ..feedback import EpisodeMemory
from ..pipeline import MAX_ROUNDS, DefenseAgent, EpisodeResult
from ..reasoner import Completion, Reasoner, ReasonerConfig, ReasonerError, make_reasoner

log = logging.getLogger(__name__)

STAGES = ("collector", "analyzer", "decision", "deployer", "feedback")


@dataclass
class RunConfig:
    scenario: str = "syn_flood"
    backend: str = "oracle"
    trials: int = 1
    episodes: int = 10
    seed: int = 0
    epsilon: float = 0.1
    use_memory: bool = True
    memory_path: Optional[str] = None
    trace: Optional[str] = None
    risk_k: float = 3.0
    max_rounds: int = MAX_ROUNDS
    workers: int = 1
    weights: Weights = field(default_factory=Weights)
    scenario_config: Optional[ScenarioConfig] = None
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)

    def base_scenario(self) -> ScenarioConfig:
        if self.scenario_config is not None:
            return self.scenario_config.replace(scenario=self.scenario)
        cfg = ScenarioConfig(scenario=self.scenario)
        cfg.validate()
        return cfg

    def validate(self) -> "RunConfig":
        if self.trials < 1 or self.episodes < 1 or self.max_rounds < 1 or self.workers < 1:
            raise ConfigError("trials, episodes, max_rounds and workers must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon {self.epsilon} outside [0, 1]")
        if self.backend != self.reasoner.backend:
            raise ConfigError(f"backend {self.backend!r} does not match reasoner config {self.reasoner.backend!r}")
        self.weights.validate()
        self.reasoner.validate()
        self.base_scenario()
        return self


@dataclass
class EpisodeRecord:
    episode: int
    verdict: str
    rounds: int
    steps_to_success: Optional[int]
    survived: list
    stage_ok: list
    action_latencies: list
    cost: float
    input_tokens: int = 0
    output_tokens: int = 0

    @classmethod
    def from_result(cls, r: EpisodeResult) -> "EpisodeRecord":
        return cls(r.episode, r.verdict, r.rounds, r.steps_to_success, list(r.survived),
                   [dict(t.stage_ok) for t in r.traces], list(r.action_latencies), r.cost,
                   r.input_tokens, r.output_tokens)


@dataclass
class TrialResult:
    trial: int
    seed: int
    scenario: str
    backend: str
    episodes: list = field(default_factory=list)
    errored: bool = False
    error: Optional[str] = None
    calls: int = 0
    failed_calls: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        d = dict(d)
        d["episodes"] = [EpisodeRecord(**e) for e in d.get("episodes", [])]
        return cls(**d)

    def deterministic_view(self) -> dict:
        """Everything except wall-clock latencies, which vary between runs."""
        d = self.to_dict()
        for e in d["episodes"]:
            e["action_latencies"] = len(e["action_latencies"])
        return d


class CountingReasoner:
    """Pass-through wrapper counting calls and failures for errored-trial detection."""

    def __init__(self, inner: Reasoner):
        self.inner = inner
        self.calls = 0
        self.failed = 0

    def complete(self, role_prompt: str, payload: Any, schema: Any) -> Completion:
        self.calls += 1
        try:
            return self.inner.complete(role_prompt, payload, schema)
        except ReasonerError:
            self.failed += 1
            raise


def _initial_memory(cfg: RunConfig) -> EpisodeMemory:
    if cfg.memory_path and Path(cfg.memory_path).exists():
        return EpisodeMemory.load(cfg.memory_path, use_inter=cfg.use_memory)
    return EpisodeMemory(use_inter=cfg.use_memory)


def run_one(cfg: RunConfig, trial: int, reasoner: Optional[Reasoner] = None,
            trace: Optional[list] = None) -> tuple[TrialResult, EpisodeMemory]:
    """Run a single trial with seed ``cfg.seed + trial``."""
    seed = cfg.seed + trial
    scenario = cfg.base_scenario().replace(seed=seed)
    counter = CountingReasoner(reasoner if reasoner is not None else make_reasoner(cfg.reasoner))
    memory = _initial_memory(cfg)
    agent = DefenseAgent(scenario, counter, cfg.weights, memory, epsilon=cfg.epsilon, risk_k=cfg.risk_k,
                         max_rounds=cfg.max_rounds)
    result = TrialResult(trial, seed, cfg.scenario, cfg.backend)
    try:
        for e in range(1, cfg.episodes + 1):
            ep = agent.run_episode(e)
            result.episodes.append(EpisodeRecord.from_result(ep))
            if trace is not None:
                trace.extend({"trial": trial, "episode": e, **asdict(t)} for t in ep.traces)
    except ReasonerError as exc:
        result.errored, result.error = True, str(exc)
    result.calls, result.failed_calls = counter.calls, counter.failed
    if counter.calls and counter.failed == counter.calls:
        result.errored = True
        result.error = result.error or f"all {counter.calls} reasoner calls failed"
    return result, memory


def run(cfg: RunConfig, reasoner: Optional[Reasoner] = None) -> list[TrialResult]:
    """Independent trials on a bounded worker pool; results come back in trial order.

    If ``memory_path`` is set, every trial starts from the memory stored there
    and the final memory of the last trial is written back.
    """
    cfg.validate()
    traces: list[list] = [[] for _ in range(cfg.trials)]
    want_trace = cfg.trace is not None

    def job(i: int):
        return run_one(cfg, i, reasoner, traces[i] if want_trace else None)

    if cfg.workers == 1:
        out = [job(i) for i in range(cfg.trials)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(job, range(cfg.trials)))
    results = [r for r, _ in out]
    errored = sum(r.errored for r in results)
    if errored:
        log.warning("%d of %d trials errored and will be excluded from metrics", errored, cfg.trials)
    if want_trace:
        write_jsonl((row for t in traces for row in t), cfg.trace)
    if cfg.memory_path:
        out[-1][1].save(cfg.memory_path)
    return results


def _atomic_write(path: Union[str, os.PathLike], text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_jsonl(rows, path: Union[str, os.PathLike]) -> None:
    _atomic_write(path, "".join(json.dumps(r, sort_keys=True, default=str) + "\n" for r in rows))


def save_results(results: Sequence[TrialResult], path: Union[str, os.PathLike]) -> None:
    write_jsonl((r.to_dict() for r in results), path)


def load_results(path: Union[str, os.PathLike]) -> list[TrialResult]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrialResult.from_dict(json.loads(line)) for line in lines if line.strip()]
