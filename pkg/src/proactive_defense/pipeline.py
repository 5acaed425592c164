"""Five-stage defense loop: collect, analyze, decide, deploy, feedback."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from . import analyzer
from .analyzer import RiskAssessment
from .collector import SecurityRecord, collect, validate_record
from .config import ScenarioConfig, Weights
from .decision import FLOOD_ALERTS, decide, epsilon_for
from .deployer import DefenseLibrary, deploy_plan
from .env import StepOutcome, advance_step, init_env, label_round, snapshot
from .feedback import EpisodeMemory, Verdict, endpoint_check, evaluate
from .reasoner import CostLedger, Reasoner, ReasonerError, role_prompt, schemas

MAX_ROUNDS = 50
DECISION_RISK = 5.0
ANALYZER_TOLERANCE = 2.0


@dataclass
class RoundTrace:
    round: int
    stage_ok: dict
    survived: list
    availability: list
    label: str
    risk: float
    gt_risk: float
    hypothesis: str
    gt_hypothesis: str
    context: str
    plan: Optional[dict]
    deployments: list
    evaluation: dict
    action_latencies: list
    cost: float
    reasoner_error: Optional[str] = None


@dataclass
class EpisodeResult:
    episode: int
    verdict: str
    rounds: int
    steps_to_success: Optional[int]
    survived: list
    traces: list
    cost: float
    input_tokens: int
    output_tokens: int
    action_latencies: list = field(default_factory=list)

    @property
    def surviving_rate(self) -> float:
        return sum(self.survived) / len(self.survived) if self.survived else 1.0


def conserved(raw: Sequence[dict], record: SecurityRecord) -> bool:
    """Every raw occurrence is accounted for, and every hostile flood event became an alert."""
    total = sum(int(e.get("repeat", 1)) for e in raw)
    accounted = record.dropped_irrelevant + record.absorbed + sum(a.count for a in record.alerts) \
        + len(record.parse_warnings)
    hostile = sum(int(e.get("repeat", 1)) for e in raw if e.get("truth") == "attack" and e["event"] in FLOOD_ALERTS)
    return total == accounted and hostile == record.alert_total(*FLOOD_ALERTS)


def ground_truth(cfg: ScenarioConfig, env, outcomes: Sequence[StepOutcome], rounds_active: int) -> tuple[float, str]:
    """Risk and hypothesis from simulator state rather than telemetry."""
    if not cfg.attack_enabled:
        return 0.0, "unknown"
    svc = env.service
    affected = sum(1 for p in svc.pods if p.half_open or p.slow) / len(svc.pods)
    offered = sum(o.offered for o in outcomes)
    web = sum(o.served for o in outcomes) / offered if offered else 1.0
    gain = sum(o.victim_gain for o in outcomes) / len(outcomes) if outcomes else 1.0
    if gain < 1.0 and env.co_resident_contention() > 0:
        affected = 1.0
    loss = max(0.0, 1.0 - min(web, gain))
    s, i, d = (analyzer.scope_subscore(affected), analyzer.impact_subscore(loss),
               analyzer.duration_subscore(rounds_active))
    return analyzer.score_risk(s, i, d), cfg.scenario


class DefenseAgent:
    """Runs episodes for one trial; owns the memory, library and cost ledger."""

    def __init__(
        self,
        cfg: ScenarioConfig,
        reasoner: Reasoner,
        weights: Weights = Weights(),
        memory: Optional[EpisodeMemory] = None,
        library: Optional[DefenseLibrary] = None,
        epsilon: float = 0.1,
        decay: float = 0.9,
        risk_k: float = 3.0,
        max_rounds: int = MAX_ROUNDS,
        audit_dir: Optional[str] = None,
    ):
        weights.validate()
        self.cfg = cfg
        self.reasoner = reasoner
        self.weights = weights
        self.memory = memory if memory is not None else EpisodeMemory()
        self.library = library if library is not None else DefenseLibrary.seeded()
        self.epsilon = epsilon
        self.decay = decay
        self.risk_k = risk_k
        self.max_rounds = max_rounds
        self.audit_dir = audit_dir
        self.ledger = CostLedger()

    # -- stages ---------------------------------------------------------------
    def _collect(self, raw: list, round_id: int) -> SecurityRecord:
        names = sorted({str(e.get("event")) for e in raw if isinstance(e, dict) and e.get("event")})
        classes = None
        try:
            c = self.reasoner.complete(role_prompt("collector"), {"events": names}, schemas.COLLECTOR)
            self.ledger.add("collect", c.usage)
            classes = c.response["classes"]
        except ReasonerError:
            pass
        return collect(raw, round_id, classes)

    def _analyze(self, record: SecurityRecord, history: list, rounds_active: int) -> tuple[RiskAssessment, str]:
        anomalies, hyp = analyzer.detect_anomalies(record, history, self.risk_k)
        rounds = rounds_active + 1 if hyp != "unknown" else 0
        frac, loss = analyzer.impact_inputs(record)
        payload = {
            "affected_fraction": frac, "availability_loss": loss, "rounds_under_attack": rounds,
            "detected_hypothesis": hyp, "anomalies": [vars(a) for a in anomalies],
            "status": {k: v for k, v in record.status_summary.items() if isinstance(v, (int, float))},
        }
        _, constraints = analyzer.analyze_status(record)
        try:
            c = self.reasoner.complete(role_prompt("analyzer"), payload, schemas.ASSESSMENT)
        except ReasonerError:
            a = analyzer.assess_locally(record, history, rounds, self.risk_k)
            a.low_confidence = True
            return a, hyp
        self.ledger.add("analyze", c.usage)
        r = c.response
        s, i, d = r["scope_sub"], r["impact_sub"], r["duration_sub"]
        a = RiskAssessment(s, i, d, analyzer.score_risk(s, i, d), anomalies, r["attack_hypothesis"],
                           r["rationale"], constraints)
        return a, r["attack_hypothesis"]

    def _evaluate_stage(self, label: str, context: str, signature: Sequence[str], scores: dict) -> tuple[bool, str]:
        payload = {"label": label, "context": context, "plan_signature": list(signature), "scores": scores}
        try:
            c = self.reasoner.complete(role_prompt("feedback"), payload, schemas.EVALUATION)
        except ReasonerError as exc:
            return False, f"evaluation unavailable: {exc}"
        self.ledger.add("feedback", c.usage)
        ok = bool(c.response["success"]) == (label == "secure")
        return ok, c.response["lessons"]

    # -- episode ----------------------------------------------------------------
    def run_episode(self, episode: int) -> EpisodeResult:
        cfg = self.cfg
        env = init_env(cfg, episode)
        rng = random.Random(f"decide:{cfg.seed}:{episode}")
        eps = epsilon_for(episode, self.epsilon, self.decay)
        self.memory.intra = []
        ledger_mark = len(self.ledger.calls)

        pending: list = []
        warm: list[StepOutcome] = []
        for _ in range(cfg.warmup_steps):
            _, o = advance_step(env)
            pending.extend(o.raw_events)
            warm.append(o)
        prev_outcomes = warm
        history: list[dict] = []
        labels: list[str] = []
        survived: list[bool] = []
        traces: list[RoundTrace] = []
        latencies: list[float] = []
        rounds_active = 0
        verdict = Verdict.CONTINUE

        while verdict is Verdict.CONTINUE:
            round_id = env.clock.round
            mark = len(self.ledger.calls)
            raw = pending
            record = self._collect(raw, round_id)
            collect_ok = not validate_record(record) and conserved(raw, record)
            env.clock.record_stage("collect")

            gt_risk, gt_hyp = ground_truth(cfg, env, prev_outcomes, round_id if cfg.attack_enabled else 0)
            assessment, hyp = self._analyze(record, history, rounds_active)
            rounds_active = rounds_active + 1 if hyp != "unknown" else 0
            history.append(analyzer.record_features(record))
            analyze_ok = abs(assessment.risk_score - gt_risk) <= ANALYZER_TOLERANCE and hyp == gt_hyp
            env.clock.record_stage("analyze")

            decision = decide(assessment, record, env.caps(), self.reasoner, self.weights, eps, rng,
                              self.memory, self.ledger)
            plan = decision.plan
            decide_ok = plan is not None or gt_risk < DECISION_RISK
            env.clock.record_stage("decide")

            before = snapshot(env)
            hostile_start = env.hostile_occupancy()
            steps = []
            if plan is not None:
                steps = deploy_plan(plan.actions, env, self.library, self.reasoner, assessment.constraints,
                                    self.ledger, self.audit_dir)
            deploy_ok = all(s.record.ok for s in steps)
            round_latencies = [s.record.latency for s in steps]
            latencies.extend(round_latencies)
            env.clock.record_stage("deploy")

            outcomes = []
            pending = []
            for _ in range(cfg.steps_per_round):
                _, o = advance_step(env)
                outcomes.append(o)
                pending.extend(o.raw_events)
            prev_outcomes = outcomes
            label = label_round(cfg, outcomes, hostile_start).value
            labels.append(label)
            survived.extend(o.survived for o in outcomes)
            round_cost = self.ledger.since(mark).cost
            ev = evaluate(before, env, [s.record for s in steps], self.weights, outcomes, round_cost)
            signature = plan.signature if plan is not None else ()
            eval_ok, lessons = self._evaluate_stage(label, decision.context, signature, ev.norms)
            for s in steps:
                if s.program is not None and s.record.ok:
                    self.library.archive(s.program, label)
            self.memory.log_round(
                round_id, decision.context, signature, label,
                plan.to_dict() if plan is not None else None,
                [s.report.failures if s.report else [] for s in steps],
                [vars(s.record) for s in steps], ev.to_dict(), lessons,
            )
            verdict = endpoint_check(labels, cfg.stable_rounds)
            if verdict is Verdict.CONTINUE and len(labels) >= self.max_rounds:
                verdict = Verdict.FAILURE
            feedback_ok = eval_ok and len(self.memory.inter) <= self.memory.window
            env.clock.record_stage("feedback")

            traces.append(RoundTrace(
                round=round_id,
                stage_ok={"collector": collect_ok, "analyzer": analyze_ok, "decision": decide_ok,
                          "deployer": deploy_ok, "feedback": feedback_ok},
                survived=[o.survived for o in outcomes],
                availability=[o.availability for o in outcomes],
                label=label, risk=assessment.risk_score, gt_risk=gt_risk, hypothesis=hyp, gt_hypothesis=gt_hyp,
                context=decision.context, plan=plan.to_dict() if plan is not None else None,
                deployments=[{"kind": s.record.kind, "origin": s.record.origin, "ok": s.record.ok,
                              "error": s.record.error} for s in steps],
                evaluation=ev.to_dict(), action_latencies=round_latencies, cost=round_cost,
                reasoner_error=decision.error,
            ))

        self.memory.finalize(verdict, episode, cfg.scenario)
        spent = self.ledger.since(ledger_mark)
        return EpisodeResult(
            episode=episode, verdict=verdict.value, rounds=len(labels),
            steps_to_success=len(labels) if verdict is Verdict.SUCCESS else None,
            survived=survived, traces=traces, cost=spent.cost,
            input_tokens=spent.input_tokens, output_tokens=spent.output_tokens, action_latencies=latencies,
        )


def run_trial(
    cfg: ScenarioConfig,
    reasoner: Reasoner,
    episodes: int = 10,
    use_memory: bool = True,
    epsilon: float = 0.1,
    weights: Weights = Weights(),
    memory: Optional[EpisodeMemory] = None,
    **kwargs: Any,
) -> list[EpisodeResult]:
    mem = memory if memory is not None else EpisodeMemory(use_inter=use_memory)
    agent = DefenseAgent(cfg, reasoner, weights, mem, epsilon=epsilon, **kwargs)
    return [agent.run_episode(e) for e in range(1, episodes + 1)]
