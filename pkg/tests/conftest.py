from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from proactive_defense.config import ScenarioConfig

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(params=["syn_flood", "slow_http", "memory_dos"])
def scenario(request) -> str:
    return request.param


@pytest.fixture
def syn_cfg() -> ScenarioConfig:
    return ScenarioConfig(scenario="syn_flood", seed=3)


@pytest.fixture
def mem_cfg() -> ScenarioConfig:
    return ScenarioConfig(scenario="memory_dos", seed=3)
