from __future__ import annotations

import json
import math
import random

import httpx
import pytest

from proactive_defense.analyzer import Constraints, RiskAssessment
from proactive_defense.collector import collect
from proactive_defense.config import ConfigError, ScenarioConfig, Weights
from proactive_defense.decision import decide
from proactive_defense.env import advance_step, init_env
from proactive_defense.pipeline import DefenseAgent
from proactive_defense.reasoner import (MODEL_PRESETS, ROLES, CostLedger, OracleReasoner, ReasonerConfig,
                                        ReasonerError, RemoteReasoner, Usage, load_prompt, role_prompt, schemas,
                                        strip_fences)
from proactive_defense.reasoner.remote import build_request

from stub_server import StubServer

PRICES = (2.5e-7, 1.0e-6)


def remote(url: str, retries: int = 2, **kw) -> RemoteReasoner:
    cfg = ReasonerConfig.preset("gpt-4o-mini", endpoint=url, price_input=PRICES[0], price_output=PRICES[1],
                                retries=retries, timeout=5.0, **kw)
    return RemoteReasoner(cfg, httpx.Client(timeout=5.0, trust_env=False))


SYN_PAYLOAD = {
    "assessment": {"attack_hypothesis": "syn_flood", "risk_score": 8},
    "state": {"offenders": ["203.0.113.10"], "half_open": 900, "availability_loss": 0.6},
    "constraints": {"max_new_replicas": 5},
}


def test_oracle_syn_plan_block_recycle_scale():
    r = OracleReasoner()
    c = r.complete(role_prompt("decision"), SYN_PAYLOAD, schemas.PLAN)
    plan = {x["strategy"]: x for x in c.response["candidates"]}
    assert c.response["recommended"] == "filter"
    assert [a["action_kind"] for a in plan["filter"]["actions"]] == ["block_source", "recycle_half_open",
                                                                   "scale_replicas"]
    assert c.usage == Usage() and c.usage.cost == 0.0
    assert r.complete(role_prompt("decision"), SYN_PAYLOAD, schemas.PLAN).response == c.response


def test_oracle_rejects_unknown_schema():
    with pytest.raises(ReasonerError):
        OracleReasoner().complete("x", {}, {"title": "nope"})


def test_strip_fences():
    assert strip_fences("```json\n{\"a\": 1}\n```") == '{"a": 1}'
    assert strip_fences("```not json```") == "not json"
    assert strip_fences('{"a": 1}') == '{"a": 1}'


@pytest.mark.parametrize("model", sorted(MODEL_PRESETS))
def test_presets_and_request_shape(model):
    cfg = ReasonerConfig.preset(model)
    assert (cfg.temperature, cfg.top_p) == MODEL_PRESETS[model]
    req = build_request(cfg, "sys", {"k": 1}, schemas.PLAN)
    assert req["model"] == model and req["temperature"] == cfg.temperature and req["top_p"] == cfg.top_p
    assert [m["role"] for m in req["messages"]] == ["system", "user"]
    assert json.loads(req["messages"][1]["content"])["stage"] == "plan"


def test_preset_values():
    assert MODEL_PRESETS["gpt-4o-mini"] == (1.0, 1.0)
    assert MODEL_PRESETS["deepseek-r1-distill-qwen-32b"] == (0.6, 0.95)
    assert MODEL_PRESETS["qwen3-32b"] == (0.7, 0.8)


@pytest.mark.parametrize("kw", [{"backend": "local"}, {"temperature": 2.5}, {"top_p": 0.0}, {"retries": -1},
                                {"timeout": 0}, {"price_input": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ReasonerConfig(**kw).validate()
    with pytest.raises(ConfigError):
        ReasonerConfig.preset("unknown-model")


def test_linear_pricing():
    a, b = 3e-6, 7e-6
    assert ReasonerConfig(price_input=a, price_output=b).cost(1000, 500) == 1000 * a + 500 * b


def test_cost_ledger_sums():
    led = CostLedger()
    led.add("a", Usage(10, 5, 0.5, 0.1))
    led.add("b", Usage(3, 2, 0.25, 0.2))
    assert (led.input_tokens, led.output_tokens) == (13, 7)
    assert led.cost == math.fsum([0.1, 0.2]) and led.latency == 0.75
    assert led.since(1).input_tokens == 3


def test_prompts_exist_for_every_role():
    for role in ROLES:
        assert load_prompt(role).strip()
    assert role_prompt("analyzer").startswith(load_prompt("profile").rstrip())
    with pytest.raises(ReasonerError):
        load_prompt("planner")


def test_malformed_reply_retries_then_errors():
    with StubServer("malformed") as srv:
        r = remote(srv.url, retries=0)
        with pytest.raises(ReasonerError):
            r.complete(role_prompt("decision"), SYN_PAYLOAD, schemas.PLAN)
        assert len(srv.requests) == 1
        r = remote(srv.url, retries=2)
        with pytest.raises(ReasonerError):
            r.complete(role_prompt("decision"), SYN_PAYLOAD, schemas.PLAN)
        assert len(srv.requests) == 4


def test_unreachable_endpoint_errors():
    with StubServer() as srv:
        url = srv.url
    with pytest.raises(ReasonerError):
        remote(url, retries=1).complete(role_prompt("analyzer"), {}, schemas.ASSESSMENT)


def test_malformed_reasoner_never_mutates_env():
    cfg = ScenarioConfig(seed=4)
    with StubServer("malformed") as srv:
        res = DefenseAgent(cfg, remote(srv.url, retries=1), max_rounds=6).run_episode(1)
    assert res.verdict == "failure" and res.cost == 0.0
    assert all(t.plan is None and t.deployments == [] for t in res.traces)
    # the environment evolved exactly as if no defender existed
    env = init_env(cfg, 1)
    n = cfg.warmup_steps + len(res.traces) * cfg.steps_per_round
    steps = [advance_step(env)[1].availability for _ in range(n)]
    assert [a for t in res.traces for a in t.availability] == steps[cfg.warmup_steps:]


def test_decide_with_malformed_reasoner_yields_no_plan():
    env = init_env(ScenarioConfig(seed=4))
    for _ in range(8):
        advance_step(env)
    a = RiskAssessment(3, 4, 3, 10, [], "syn_flood", "", Constraints(5, 50.0, 50.0))
    with StubServer("malformed") as srv:
        d = decide(a, collect([], 1), env.caps(), remote(srv.url, retries=1), Weights(), 0.0, random.Random(0))
    assert d.plan is None and d.error


def test_transcript_logged(tmp_path):
    path = tmp_path / "t.jsonl"
    with StubServer() as srv:
        remote(srv.url, transcript_path=str(path)).complete(role_prompt("decision"), SYN_PAYLOAD, schemas.PLAN)
    rows = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(rows) == 1 and rows[0]["error"] is None


@pytest.mark.parametrize("scenario", ["syn_flood", "memory_dos"])
def test_remote_episode_through_all_stages(scenario):
    with StubServer() as srv:
        r = remote(srv.url)
        agent = DefenseAgent(ScenarioConfig(scenario=scenario, seed=2), r)
        res = agent.run_episode(1)
    assert res.verdict == "success"
    titles = set(srv.titles)
    expected = {"collector", "assessment", "plan", "evaluation"} | ({"program"} if scenario == "memory_dos" else set())
    assert expected <= titles
    # ledger equals stub usage times prices, exactly
    assert agent.ledger.input_tokens == sum(i for i, _ in srv.usages) == res.input_tokens
    assert agent.ledger.output_tokens == sum(o for _, o in srv.usages) == res.output_tokens
    assert res.cost == math.fsum(i * PRICES[0] + o * PRICES[1] for i, o in srv.usages)
    assert res.cost == math.fsum(u.cost for u in r.billed)


def test_remote_matches_oracle_outcome():
    cfg = ScenarioConfig(seed=5)
    oracle = DefenseAgent(cfg, OracleReasoner()).run_episode(1)
    with StubServer() as srv:
        rem = DefenseAgent(cfg, remote(srv.url)).run_episode(1)
    assert [t.label for t in rem.traces] == [t.label for t in oracle.traces]
    assert rem.survived == oracle.survived
