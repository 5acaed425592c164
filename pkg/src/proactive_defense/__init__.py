"""Proactive defense against availability attacks in a simulated cloud.

A five-stage loop (collect, analyze, decide, deploy, feedback) driven by a
pluggable reasoner, evaluated against DQN, actor-critic and PPO baselines.
"""
from __future__ import annotations

__version__ = "0.1.0"
