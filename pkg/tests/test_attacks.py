from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from proactive_defense.attacks import AttackProfile, default_profile, emit_load
from proactive_defense.config import ConfigError, ScenarioConfig
from proactive_defense.env import init_env


def test_flooding_profile_has_two_distinct_ips():
    p = default_profile(ScenarioConfig(scenario="syn_flood"))
    assert len(p.sources) == 2 and len(set(p.sources)) == 2
    assert all(s.count(".") == 3 for s in p.sources)


def test_memory_profile_uses_vm_ids():
    p = default_profile(ScenarioConfig(scenario="memory_dos"))
    assert all(s.startswith("vm-") for s in p.sources)


def test_blocked_source_contributes_zero(syn_cfg):
    env = init_env(syn_cfg)
    src = env.profile.sources[0]
    env.block(src)
    load = emit_load(env.profile, env, 1)
    assert load.contribution[src] == 0
    assert load.contribution[env.profile.sources[1]] == syn_cfg.intensity


def test_shuffle_adaptation_window(syn_cfg):
    env = init_env(syn_cfg)
    t = 6
    env.clock.step = t
    env.shuffle_address()
    totals = [emit_load(env.profile, env, t + k).total() for k in range(1, 5)]
    assert totals[:3] == [0, 0, 0]
    assert totals[3] == 2 * syn_cfg.intensity


@pytest.mark.parametrize("intensity,expected", [(100.0, 100.0), (80.0, 80.0), (250.0, 100.0)])
def test_memory_contention_capped(intensity, expected):
    env = init_env(ScenarioConfig(scenario="memory_dos", attack_intensity=intensity))
    load = emit_load(env.profile, env, 1)
    assert all(v == expected for v in load.contribution.values())


def test_mismatched_profile_rejected(syn_cfg):
    env = init_env(syn_cfg)
    with pytest.raises(ConfigError):
        emit_load(AttackProfile("memory_dos", ("vm-atk-0",), 80.0), env, 1)


@given(st.floats(0, 1e6), st.floats(0, 200))
def test_memory_contention_never_exceeds_cap(intensity, throttle):
    env = init_env(ScenarioConfig(scenario="memory_dos", attack_intensity=intensity))
    env.throttle_vm(env.profile.sources[0], throttle)
    load = emit_load(env.profile, env, 1)
    assert all(0 <= v <= 100 for v in load.contribution.values())


@given(st.lists(st.booleans(), min_size=2, max_size=2), st.lists(st.booleans(), min_size=2, max_size=2))
def test_flood_load_is_additive(blocked, adapting):
    env = init_env(ScenarioConfig(scenario="slow_http"))
    srcs = env.profile.sources
    for s, b, a in zip(srcs, blocked, adapting):
        if b:
            env.block(s)
        if a:
            env.attack_state[s] = 5
    load = emit_load(env.profile, env, 3)
    expected = sum(env.profile.intensity for s, b, a in zip(srcs, blocked, adapting) if not b and not a)
    assert load.total() == expected
