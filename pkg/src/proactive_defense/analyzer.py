"""Status extraction, constraint derivation, anomaly detection and risk scoring."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

from .collector import SecurityRecord

SCOPE_MAX, IMPACT_MAX, DURATION_MAX = 3, 4, 3
HYPOTHESES = ("syn_flood", "slow_http", "memory_dos", "unknown")

HIGH_UTIL = 85.0
PREEMPTIBLE = ("batch_analytics", "log_compaction", "backup_snapshot")

# metric -> (prior mean, prior sigma, absolute guardrail)
METRICS = {
    "half_open_connections": (0.0, 25.0, 1000.0),
    "syn_attempts": (0.0, 25.0, 500.0),
    "slow_connections": (0.0, 25.0, 500.0),
    "slow_attempts": (0.0, 25.0, 500.0),
    "max_contention_demand": (0.0, 2.0, 30.0),
    "co_resident_contention": (0.0, 2.0, 30.0),
    "refused": (0.0, 10.0, 200.0),
    "cpu_util": (10.0, 5.0, 95.0),
}
SIGNATURES = {
    "syn_flood": ("half_open_connections", "syn_attempts"),
    "slow_http": ("slow_connections", "slow_attempts"),
    "memory_dos": ("max_contention_demand", "co_resident_contention"),
}
BASELINE_WINDOW = 10


class RiskDomainError(ValueError):
    pass


@dataclass
class Constraints:
    max_new_replicas: int
    cpu_headroom: float
    memory_headroom: float
    preemptible_tasks: list = field(default_factory=list)
    free_pods: int = 0


@dataclass
class SystemStatus:
    hardware: dict
    system: dict
    network: dict
    application: dict
    low_confidence: bool = False


@dataclass
class Anomaly:
    metric: str
    observed: float
    baseline: float
    deviation: float
    guardrail: bool = False


@dataclass
class RiskAssessment:
    scope_sub: int
    impact_sub: int
    duration_sub: int
    risk_score: float
    anomalies: list
    attack_hypothesis: str
    rationale: str
    constraints: Constraints
    low_confidence: bool = False

    @property
    def bucket(self) -> str:
        return risk_bucket(self.risk_score)

    def to_dict(self) -> dict:
        return asdict(self)


def risk_bucket(score: float) -> str:
    if score >= 7:
        return "high"
    if score >= 4:
        return "med"
    return "low"


def analyze_status(record: SecurityRecord) -> tuple[SystemStatus, Constraints]:
    s = record.status_summary or {}
    low_conf = "active_pods" not in s
    cpu = float(s.get("cpu_util", 0.0))
    mem = float(s.get("memory_util", 0.0))
    replicas = int(s.get("active_replicas", 0))
    ppr = int(s.get("pods_per_replica", 1)) or 1
    pool = int(s.get("pod_pool", 0))
    max_replicas = int(s.get("max_replicas", replicas))
    active_pods = int(s.get("active_pods", replicas * ppr))
    free_pods = max(0, pool - active_pods)
    max_new = max(0, min(max_replicas - replicas, free_pods // ppr))
    if low_conf:
        max_new = 0

    status = SystemStatus(
        # rough power model: idle draw plus load-proportional draw per pod
        hardware={"power_watts": active_pods * (40.0 + 0.6 * cpu), "memory_util": mem},
        system={"cpu_util": cpu, "load": cpu / 100.0, "active_replicas": replicas, "active_pods": active_pods},
        network={
            "total_connections": s.get("total_connections", 0),
            "half_open_connections": s.get("half_open_connections", 0),
            "slow_connections": s.get("slow_connections", 0),
            "refused": record.alert_total("conn_refused"),
        },
        application={
            "legit_offered": s.get("legit_offered", 0),
            "legit_served": s.get("legit_served", 0),
            "victim_gain": s.get("victim_gain_mean", 1.0),
        },
        low_confidence=low_conf,
    )
    preempt: list[str] = []
    cpu_headroom = max(0.0, 100.0 - cpu)
    mem_headroom = max(0.0, 100.0 - mem)
    if cpu >= HIGH_UTIL or mem >= HIGH_UTIL:
        preempt = list(PREEMPTIBLE)
    return status, Constraints(max_new, cpu_headroom, mem_headroom, preempt, free_pods)


def score_risk(scope_sub: int, impact_sub: int, duration_sub: int) -> float:
    """Total risk on a 0-10 scale.

    The sub-score maxima (3 + 4 + 3) already sum to 10, so normalizing the
    sum onto 0-10 is the identity.
    """
    for name, value, hi in (("scope", scope_sub, SCOPE_MAX), ("impact", impact_sub, IMPACT_MAX),
                            ("duration", duration_sub, DURATION_MAX)):
        if isinstance(value, bool) or not float(value).is_integer() or not 0 <= value <= hi:
            raise RiskDomainError(f"{name} sub-score {value!r} outside 0..{hi}")
    total = scope_sub + impact_sub + duration_sub
    return float(total) * 10.0 / (SCOPE_MAX + IMPACT_MAX + DURATION_MAX)


def scope_subscore(affected_fraction: float) -> int:
    if affected_fraction < 0.10:
        return 0
    if affected_fraction < 0.30:
        return 1
    if affected_fraction < 0.60:
        return 2
    return 3


def impact_subscore(availability_loss: float) -> int:
    if availability_loss <= 0.0:
        return 0
    if availability_loss <= 0.05:
        return 1
    if availability_loss <= 0.20:
        return 2
    if availability_loss <= 0.50:
        return 3
    return 4


def duration_subscore(rounds_under_attack: int) -> int:
    if rounds_under_attack <= 0:
        return 0
    if rounds_under_attack == 1:
        return 1
    if rounds_under_attack <= 3:
        return 2
    return 3


def record_features(record: SecurityRecord) -> dict[str, float]:
    """Numeric indicators tracked against the rolling baseline."""
    s = record.status_summary or {}
    return {
        "half_open_connections": float(s.get("half_open_connections", 0)),
        "syn_attempts": float(record.alert_total("syn_half_open", "syn_dropped")),
        "slow_connections": float(s.get("slow_connections", 0)),
        "slow_attempts": float(record.alert_total("slow_http_conn", "http_dropped")),
        "max_contention_demand": float(s.get("max_contention_demand", 0.0)),
        "co_resident_contention": float(s.get("co_resident_contention", 0.0)),
        "refused": float(record.alert_total("conn_refused")),
        "cpu_util": float(s.get("cpu_util", 0.0)),
    }


def impact_inputs(record: SecurityRecord) -> tuple[float, float]:
    """(affected fraction, availability loss) as observed in the record."""
    s = record.status_summary or {}
    pods = int(s.get("active_pods", 0))
    frac = s.get("affected_pods", 0) / pods if pods else 0.0
    offered = s.get("legit_offered", 0)
    web = s.get("legit_served", 0) / offered if offered else 1.0
    gain = float(s.get("victim_gain_mean", 1.0))
    if gain < 1.0 and float(s.get("co_resident_contention", 0.0)) > 0:
        frac = max(frac, 1.0)
    loss = max(0.0, 1.0 - min(web, gain))
    return frac, loss


def baseline(history: Sequence[Mapping[str, float]], metric: str) -> tuple[float, float]:
    window = [h[metric] for h in history[-BASELINE_WINDOW:] if metric in h]
    prior_mean, prior_sigma, _ = METRICS[metric]
    if not window:
        return prior_mean, prior_sigma
    mean = sum(window) / len(window)
    if len(window) < 2:
        return mean, prior_sigma
    var = sum((x - mean) ** 2 for x in window) / (len(window) - 1)
    return mean, math.sqrt(var)


def detect_anomalies(
    record: SecurityRecord,
    history: Sequence[Mapping[str, float]],
    k: float = 3.0,
    sigma_floor: float = 1.0,
) -> tuple[list[Anomaly], str]:
    """Flag metrics beyond ``k`` sigma of the rolling baseline or past a guardrail.

    ``history`` holds the feature dicts of prior rounds (oldest first); with
    no history the configured priors stand in for the baseline.
    """
    features = record_features(record)
    anomalies: list[Anomaly] = []
    for metric, observed in features.items():
        mean, sigma = baseline(history, metric)
        sigma = max(sigma, sigma_floor)
        deviation = (observed - mean) / sigma
        over_guard = observed >= METRICS[metric][2]
        if abs(observed - mean) > k * sigma or over_guard:
            anomalies.append(Anomaly(metric, observed, mean, deviation, over_guard and abs(observed - mean) <= k * sigma))
    return anomalies, hypothesis_from(anomalies)


def hypothesis_from(anomalies: Sequence[Anomaly]) -> str:
    upward = {a.metric for a in anomalies if a.observed > a.baseline or a.guardrail}
    best, best_hits = "unknown", 0
    for kind, metrics in SIGNATURES.items():
        hits = sum(1 for m in metrics if m in upward)
        if hits > best_hits:
            best, best_hits = kind, hits
    return best


def assess_locally(
    record: SecurityRecord,
    history: Sequence[Mapping[str, float]],
    rounds_under_attack: int,
    k: float = 3.0,
) -> RiskAssessment:
    """Rule-table assessment without a reasoner (mapping tables + signature table)."""
    _, constraints = analyze_status(record)
    anomalies, hypothesis = detect_anomalies(record, history, k)
    frac, loss = impact_inputs(record)
    scope, impact, duration = scope_subscore(frac), impact_subscore(loss), duration_subscore(rounds_under_attack)
    return RiskAssessment(
        scope, impact, duration, score_risk(scope, impact, duration), anomalies, hypothesis,
        explain(hypothesis, scope, impact, duration, anomalies), constraints,
    )


def explain(hypothesis: str, scope: int, impact: int, duration: int, anomalies: Sequence[Anomaly]) -> str:
    flagged = ", ".join(f"{a.metric}={a.observed:g} (baseline {a.baseline:g})" for a in anomalies[:4]) or "none"
    return (
        f"hypothesis {hypothesis}: scope {scope}/3, impact {impact}/4, duration {duration}/3; "
        f"deviating indicators: {flagged}"
    )


def clamp_sub(value: Optional[float], hi: int) -> int:
    """Force an externally supplied sub-score into ``0..hi``."""
    if value is None:
        return 0
    return int(min(hi, max(0, round(float(value)))))
