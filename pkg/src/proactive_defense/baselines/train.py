"""Training loops and greedy evaluation for the RL baselines."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..config import ScenarioConfig
from .agents import ACAgent, DQNAgent, PPOAgent, TrainConfig
from .envwrap import DefenseEnv

AGENTS = {"dqn": DQNAgent, "ac": ACAgent, "ppo": PPOAgent}
# compute pricing for baselines, currency per CPU-second
COMPUTE_RATE = 1.4e-5
EVAL_OFFSET = 100_000


@dataclass
class TrainResult:
    agent: object
    curve: list = field(default_factory=list)


def _epsilon(cfg: TrainConfig, i: int) -> float:
    span = max(1, int(cfg.episodes * cfg.eps_fraction))
    frac = min(1.0, i / span)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def terminal_reward(res, cfg: TrainConfig) -> float:
    if res.verdict == "success":
        return cfg.success_bonus
    if res.verdict == "failure" and not res.truncated:
        return -cfg.failure_penalty
    return 0.0


def train(kind: str, scenario: ScenarioConfig, cfg: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Train one agent; the learning curve is deterministic for a given seed."""
    if kind not in AGENTS:
        raise ValueError(f"unknown agent {kind!r}")
    scenario.validate()
    env = DefenseEnv(scenario)
    agent = AGENTS[kind](env.obs_dim, env.n_actions, cfg, seed=seed)
    curve = []
    for i in range(cfg.episodes):
        obs = env.reset(i + 1)
        total, done, res = 0.0, False, None
        eps = _epsilon(cfg, i)
        while not done:
            a = agent.act(obs, eps) if kind == "dqn" else agent.act(obs)
            res = env.step(a)
            r = res.reward + terminal_reward(res, cfg)
            if kind == "dqn":
                agent.observe(obs, a, r, res.obs, res.done and not res.truncated)
            else:
                agent.record(r)
            total += r
            obs, done = res.obs, res.done
        if kind != "dqn":
            agent.finish_episode()
        curve.append({"episode": i + 1, "reward": total, "success": res.verdict == "success",
                      "rounds": len(env.labels)})
    return TrainResult(agent, curve)


def _greedy(agent, obs):
    if isinstance(agent, DQNAgent):
        return agent.act(obs, 0.0)
    return agent.act(obs, greedy=True)


def evaluate_policy(agent, scenario: ScenarioConfig, episodes: int = 50, seed: int = 0,
                    rate: float = COMPUTE_RATE) -> dict:
    """Greedy rollouts on held-out episodes. ``agent="random"`` draws uniform actions."""
    env = DefenseEnv(scenario)
    rng = np.random.default_rng(seed)
    wins, survived, steps, latencies, costs = 0, 0, 0, [], []
    for e in range(episodes):
        obs = env.reset(EVAL_OFFSET + e + 1)
        done, res, compute = False, None, 0.0
        while not done:
            t0 = time.perf_counter()
            a = int(rng.integers(env.n_actions)) if agent == "random" else _greedy(agent, obs)
            res = env.step(a)
            dt = time.perf_counter() - t0
            latencies.append(dt)
            compute += dt
            survived += sum(res.survived)
            steps += len(res.survived)
            obs, done = res.obs, res.done
        wins += res.verdict == "success"
        costs.append(compute * rate)
    return {
        "efficacy": wins / episodes,
        "surviving_rate": survived / steps if steps else 1.0,
        "latency": float(np.mean(latencies)) if latencies else 0.0,
        "cost": float(np.mean(costs)) if costs else 0.0,
        "episodes": episodes,
    }


def write_curve(curve: list, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["episode", "reward", "success", "rounds"])
        w.writeheader()
        w.writerows(curve)
