"""DQN, actor-critic and PPO baselines over the same simulator."""
from __future__ import annotations

from .agents import ACAgent, DQNAgent, PPOAgent, TrainConfig, TrainingError, ac_step, dqn_step, ppo_step, ppo_surrogate
from .envwrap import ACTIONS, DefenseEnv
from .mlp import MLP, Adam, param_count
from .train import evaluate_policy, train, write_curve

__all__ = [
    "ACAgent", "ACTIONS", "Adam", "DQNAgent", "DefenseEnv", "MLP", "PPOAgent", "TrainConfig", "TrainingError",
    "ac_step", "dqn_step", "evaluate_policy", "param_count", "ppo_step", "ppo_surrogate", "train", "write_curve",
]
