from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from proactive_defense.config import DIMENSIONS, ConfigError, ScenarioConfig, Weights
from proactive_defense.decision import Action, Candidate, select_plan
from proactive_defense.env import advance_step, init_env, snapshot
from proactive_defense.feedback import (EpisodeMemory, Verdict, endpoint_check, evaluate, finalize_episode,
                                        weighted_score)

S, C, X = "secure", "compromised", "contested"


def test_uniform_weights_all_ones():
    assert weighted_score({d: 1.0 for d in DIMENSIONS}, Weights()) == pytest.approx(1.0)


def test_bad_weights_rejected():
    with pytest.raises(ConfigError):
        weighted_score({d: 1.0 for d in DIMENSIONS}, {d: 0.3 for d in DIMENSIONS})


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.floats(0.01, 1.0))
def test_homogeneity(norms, c):
    n = dict(zip(DIMENSIONS, norms))
    base = weighted_score(n, Weights())
    assert weighted_score({k: v * c for k, v in n.items()}, Weights()) == pytest.approx(base * c, abs=1e-12)


def test_best_case_evaluation():
    env = init_env(ScenarioConfig(attack_enabled=False))
    before = snapshot(env)
    outs = [advance_step(env)[1] for _ in range(4)]
    ev = evaluate(before, env, [], Weights(), outs)
    assert ev.security == 1.0 and ev.resource == 0.0 and ev.recovery_time == 0
    assert ev.weighted_score == pytest.approx(1.0)
    assert all(0.0 <= v <= 1.0 for v in ev.norms.values())


def test_worst_case_evaluation():
    env = init_env(ScenarioConfig())
    for _ in range(12):
        advance_step(env)
    before = snapshot(env)
    outs = [advance_step(env)[1] for _ in range(4)]
    ev = evaluate(before, env, [], Weights(), outs)
    assert ev.security == 0.0
    assert ev.qos < env.config.survive_threshold


@pytest.mark.parametrize("labels,verdict", [([S] * 5, Verdict.SUCCESS), ([C, C, C, C, S], Verdict.CONTINUE),
                                            ([S, S], Verdict.CONTINUE), ([C] * 5, Verdict.FAILURE)])
def test_endpoint_check(labels, verdict):
    assert endpoint_check(labels) is verdict


def _episode(mem, i, verdict=Verdict.SUCCESS):
    mem.log_round(1, "syn_flood:high", ("block_source",), S if verdict is Verdict.SUCCESS else C)
    finalize_episode(mem, verdict, i, "syn_flood")


def test_window_keeps_most_recent():
    mem = EpisodeMemory(window=5)
    for i in range(1, 8):
        _episode(mem, i)
    assert [e["episode_id"] for e in mem.inter] == [3, 4, 5, 6, 7]


def test_first_episode_size_one():
    mem = EpisodeMemory()
    _episode(mem, 1)
    assert len(mem.inter) == 1 and mem.intra == []


@given(st.integers(1, 20), st.sampled_from([1, 3, 5]), st.lists(st.booleans(), min_size=20, max_size=20))
def test_window_bound_and_flag_fidelity(count, w, wins):
    mem = EpisodeMemory(window=w)
    for i in range(1, count + 1):
        _episode(mem, i, Verdict.SUCCESS if wins[i - 1] else Verdict.FAILURE)
        assert len(mem.inter) <= w
    assert [e["episode_id"] for e in mem.inter] == list(range(1, count + 1))[-w:]
    for e in mem.inter:
        assert e["outcome"] == ("success" if wins[e["episode_id"] - 1] else "failure")


def test_finalize_rejects_continue():
    with pytest.raises(ValueError):
        EpisodeMemory().finalize(Verdict.CONTINUE, 1)


def test_failed_plan_excluded_next_episode():
    mem = EpisodeMemory()
    ctx = "syn_flood:high"
    shuffle = Candidate("shuffle", [Action("shuffle_address", {})], {d: 0.9 for d in DIMENSIONS})
    block = Candidate("filter", [Action("block_source", {"ip": "203.0.113.10"})], {d: 0.5 for d in DIMENSIONS})
    assert select_plan([shuffle, block], Weights(), 0.0, mem, ctx).strategy == "shuffle"
    mem.log_round(1, ctx, shuffle.signature, C)
    mem.finalize(Verdict.FAILURE, 1, "syn_flood")
    for seed in range(10):
        assert select_plan([shuffle, block], Weights(), 0.5, mem, ctx, random.Random(seed)).strategy == "filter"
    # with the memory flag off the past episode is not consulted
    off = EpisodeMemory(use_inter=False)
    off.inter = mem.inter
    assert select_plan([shuffle, block], Weights(), 0.0, off, ctx).strategy == "shuffle"


def test_consulted_failure_carried_forward():
    mem = EpisodeMemory(window=2)
    ctx = "syn_flood:high"
    mem.log_round(1, ctx, ("shuffle_address",), C)
    mem.finalize(Verdict.FAILURE, 1)
    for ep in (2, 3, 4):
        assert mem.flag(ctx, ("shuffle_address",)) is False
        mem.log_round(1, ctx, ("block_source",), S)
        mem.finalize(Verdict.SUCCESS, ep)
    assert mem.flag(ctx, ("shuffle_address",)) is False
    assert mem.tally(ctx, ("shuffle_address",)) == (0, 0)


def test_memory_persistence(tmp_path):
    mem = EpisodeMemory(window=3)
    for i in range(1, 5):
        _episode(mem, i)
    mem.save(tmp_path / "m.json")
    back = EpisodeMemory.load(tmp_path / "m.json")
    assert back.to_dict() == mem.to_dict()


def test_snapshot_is_independent():
    mem = EpisodeMemory()
    _episode(mem, 1)
    snap = mem.snapshot()
    _episode(mem, 2)
    assert len(snap.inter) == 1
