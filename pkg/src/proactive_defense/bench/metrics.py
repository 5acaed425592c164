"""Aggregate metrics over trial results. Pure post-processing of the JSON records."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .runner import STAGES, TrialResult

Z95 = 1.96


class MetricsError(ValueError):
    pass


def mean_ci(values: Sequence[float], z: float = Z95) -> tuple[float, float]:
    """Mean and normal-approximation half-width z·s/√n (sample std, ddof=1). n=1 gives width 0."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise MetricsError("no values to summarize")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))


def trial_surviving_rate(t: TrialResult) -> float:
    flags = [f for e in t.episodes for f in e.survived]
    return sum(flags) / len(flags) if flags else 1.0


@dataclass
class Report:
    scenario: str
    backend: str
    trials: int
    errored: int
    episodes: int
    stage_accuracy: dict
    surviving_rate: float
    surviving_ci: float
    steps_by_episode: dict
    efficacy: float
    latency: float
    cost: float
    notes: list = field(default_factory=list)

    @property
    def ci_low(self) -> float:
        return self.surviving_rate - self.surviving_ci

    @property
    def ci_high(self) -> float:
        return self.surviving_rate + self.surviving_ci

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        d = dict(d)
        d["steps_by_episode"] = {int(k): v for k, v in d["steps_by_episode"].items()}
        return cls(**d)


LATENCY_NOTE = "latency is end-to-end wall clock per deployed action, including reasoner round trips"


def compute(results: Sequence[TrialResult]) -> Report:
    """Per-stage accuracy, surviving rate mean ± 95% CI over trials, steps per episode index,
    efficacy, mean action latency and mean episode cost. Errored trials are excluded."""
    results = list(results)
    if not results:
        raise MetricsError("empty result set")
    good = [t for t in results if not t.errored]
    if not good:
        raise MetricsError(f"all {len(results)} trials errored")
    scenarios = {t.scenario for t in good}
    backends = {t.backend for t in good}
    if len(scenarios) != 1 or len(backends) != 1:
        raise MetricsError(f"mixed scenarios/backends in one report: {sorted(scenarios)} {sorted(backends)}")

    episodes = [e for t in good for e in t.episodes]
    if not episodes:
        raise MetricsError("no episodes recorded")
    rounds = [r for e in episodes for r in e.stage_ok]
    stage_accuracy = {s: (sum(bool(r[s]) for r in rounds) / len(rounds) if rounds else 0.0) for s in STAGES}

    mean, half = mean_ci([trial_surviving_rate(t) for t in good])

    by_index: dict[int, list] = {}
    for e in episodes:
        by_index.setdefault(e.episode, [])
        if e.steps_to_success is not None:
            by_index[e.episode].append(e.steps_to_success)
    steps: dict[int, Optional[float]] = {i: (float(np.mean(v)) if v else None) for i, v in sorted(by_index.items())}

    latencies = [x for e in episodes for x in e.action_latencies]
    return Report(
        scenario=scenarios.pop(),
        backend=backends.pop(),
        trials=len(results),
        errored=len(results) - len(good),
        episodes=len(episodes),
        stage_accuracy=stage_accuracy,
        surviving_rate=mean,
        surviving_ci=half,
        steps_by_episode=steps,
        efficacy=sum(e.verdict == "success" for e in episodes) / len(episodes),
        latency=float(np.mean(latencies)) if latencies else 0.0,
        cost=math.fsum(e.cost for e in episodes) / len(episodes),
        notes=[LATENCY_NOTE],
    )
