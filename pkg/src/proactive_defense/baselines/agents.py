"""DQN, actor-critic and PPO agents on the numpy MLP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mlp import MLP, Adam


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.98
    lr_policy: float = 0.001
    lr_value: float = 0.01
    replay_capacity: int = 10_000
    batch_size: int = 64
    target_every: int = 100
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    entropy_coef: float = 0.01
    episodes: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.6
    hidden: int = 256
    # per-step survival reward alone makes an endless contested stalemate worth ~4/(1-gamma);
    # a terminal bonus above that makes ending the episode securely the better return
    success_bonus: float = 250.0
    failure_penalty: float = 0.0

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma {self.gamma} outside [0, 1)")
        if self.lr_policy <= 0 or self.lr_value <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must hold at least one batch")
        return self


def _check(name: str, value: float, **diag) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"{name} is not finite ({value}); diagnostics: {diag}")
    return float(value)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- DQN ----------------------------------------------------------------------

class Replay:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.d = np.zeros(capacity)
        self.n = 0
        self.i = 0

    def __len__(self) -> int:
        return self.n

    def add(self, s, a, r, s2, done) -> None:
        self.s[self.i], self.a[self.i], self.r[self.i], self.s2[self.i], self.d[self.i] = s, a, r, s2, float(done)
        self.i = (self.i + 1) % self.capacity
        self.n = min(self.n + 1, self.capacity)

    def sample(self, rng: np.random.Generator, size: int) -> tuple:
        idx = rng.integers(0, self.n, size)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]


class DQNAgent:
    def __init__(self, obs_dim: int, n_actions: int, cfg: TrainConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.n_actions = n_actions
        self.q = MLP(obs_dim, n_actions, cfg.hidden, seed=seed, out_scale=0.1)
        self.target = self.q.copy()
        self.opt = Adam(self.q.size, cfg.lr_policy)
        self.replay = Replay(cfg.replay_capacity, obs_dim)
        self.rng = np.random.default_rng(seed)
        self.updates = 0

    def act(self, obs: np.ndarray, epsilon: float = 0.0) -> int:
        if epsilon > 0 and self.rng.random() < epsilon:
            return int(self.rng.integers(self.n_actions))
        return int(np.argmax(self.q(obs)))

    def targets(self, r: np.ndarray, s2: np.ndarray, done: np.ndarray) -> np.ndarray:
        if self.cfg.gamma == 0.0:
            return np.asarray(r, dtype=float)
        return r + self.cfg.gamma * (1.0 - done) * self.target(s2).max(axis=1)

    def observe(self, s, a, r, s2, done) -> Optional[float]:
        self.replay.add(s, a, r, s2, done)
        if len(self.replay) < self.cfg.batch_size:
            return None
        return dqn_step(self, self.replay.sample(self.rng, self.cfg.batch_size))


def dqn_step(agent: DQNAgent, batch: tuple) -> float:
    """One TD regression step; copies the online net into the target net every ``target_every`` updates."""
    s, a, r, s2, done = batch
    y = agent.targets(np.asarray(r, float), np.asarray(s2, float), np.asarray(done, float))
    q, cache = agent.q.forward(np.asarray(s, float))
    n = len(a)
    rows = np.arange(n)
    td = q[rows, a] - y
    loss = _check("dqn loss", 0.5 * np.mean(td ** 2), td_max=float(np.abs(td).max()))
    g = np.zeros_like(q)
    g[rows, a] = td / n
    agent.opt.step(agent.q.params, agent.q.backward(cache, g))
    agent.updates += 1
    if agent.updates % agent.cfg.target_every == 0:
        agent.target.params[:] = agent.q.params
    return loss


# -- policy gradient ------------------------------------------------------------

@dataclass
class Rollout:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    logp: list = field(default_factory=list)

    def clear(self) -> None:
        self.obs.clear()
        self.actions.clear()
        self.rewards.clear()
        self.logp.clear()

    def __len__(self) -> int:
        return len(self.actions)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


class PolicyAgent:
    """Shared actor/critic plumbing for AC and PPO."""

    def __init__(self, obs_dim: int, n_actions: int, cfg: TrainConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.n_actions = n_actions
        self.actor = MLP(obs_dim, n_actions, cfg.hidden, seed=seed, out_scale=0.01)
        self.critic = MLP(obs_dim, 1, cfg.hidden, seed=seed + 1)
        self.opt_actor = Adam(self.actor.size, cfg.lr_policy)
        self.opt_critic = Adam(self.critic.size, cfg.lr_value)
        self.rng = np.random.default_rng(seed)
        self.buffer = Rollout()

    def probs(self, obs: np.ndarray) -> np.ndarray:
        return softmax(self.actor(obs))

    def act(self, obs: np.ndarray, greedy: bool = False) -> int:
        p = self.probs(obs)
        if greedy:
            return int(np.argmax(p))
        a = int(self.rng.choice(self.n_actions, p=p))
        self.buffer.obs.append(np.asarray(obs, float))
        self.buffer.actions.append(a)
        self.buffer.logp.append(float(np.log(p[a] + 1e-12)))
        return a

    def record(self, reward: float) -> None:
        self.buffer.rewards.append(float(reward))

    def _critic_step(self, s: np.ndarray, returns: np.ndarray) -> float:
        v, cache = self.critic.forward(s)
        diff = v[:, 0] - returns
        loss = _check("value loss", 0.5 * np.mean(diff ** 2))
        self.opt_critic.step(self.critic.params, self.critic.backward(cache, (diff / len(diff))[:, None]))
        return loss


def _entropy_grad(p: np.ndarray) -> np.ndarray:
    """d(-H)/dlogits for each row of a softmax."""
    logp = np.log(p + 1e-12)
    h = -(p * logp).sum(axis=1, keepdims=True)
    return p * (logp + h)


class ACAgent(PolicyAgent):
    def finish_episode(self) -> tuple[float, float]:
        return ac_step(self, self.buffer)


def ac_step(agent: PolicyAgent, batch: Rollout) -> tuple[float, float]:
    """Advantage-weighted policy gradient plus value regression; clears the on-policy buffer."""
    s = np.array(batch.obs)
    a = np.array(batch.actions)
    G = discounted_returns(batch.rewards, agent.cfg.gamma)
    v = agent.critic(s)[:, 0]
    adv = G - v
    logits, cache = agent.actor.forward(s)
    p = softmax(logits)
    n = len(a)
    rows = np.arange(n)
    loss = _check("policy loss", -np.mean(np.log(p[rows, a] + 1e-12) * adv))
    onehot = np.zeros_like(p)
    onehot[rows, a] = 1.0
    g = -(onehot - p) * adv[:, None] / n + agent.cfg.entropy_coef * _entropy_grad(p) / n
    agent.opt_actor.step(agent.actor.params, agent.actor.backward(cache, g))
    vloss = agent._critic_step(s, G)
    batch.clear()
    return loss, vloss


def ppo_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample clipped objective min(r·A, clip(r, 1-ε, 1+ε)·A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


class PPOAgent(PolicyAgent):
    def finish_episode(self) -> tuple[float, float]:
        return ppo_step(self, self.buffer)


def ppo_step(agent: PolicyAgent, batch: Rollout) -> tuple[float, float]:
    """Clipped-surrogate epochs over one rollout, then value regression; clears the buffer."""
    cfg = agent.cfg
    s = np.array(batch.obs)
    a = np.array(batch.actions)
    old = np.array(batch.logp)
    G = discounted_returns(batch.rewards, cfg.gamma)
    adv = G - agent.critic(s)[:, 0]
    if len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(a)
    rows = np.arange(n)
    loss = 0.0
    for _ in range(cfg.ppo_epochs):
        logits, cache = agent.actor.forward(s)
        p = softmax(logits)
        ratio = np.exp(np.log(p[rows, a] + 1e-12) - old)
        surr = ppo_surrogate(ratio, adv, cfg.ppo_clip)
        loss = _check("ppo loss", -np.mean(surr), ratio_max=float(ratio.max()))
        active = (ratio * adv) <= (np.clip(ratio, 1 - cfg.ppo_clip, 1 + cfg.ppo_clip) * adv)
        onehot = np.zeros_like(p)
        onehot[rows, a] = 1.0
        coef = np.where(active, ratio * adv, 0.0)
        g = -(onehot - p) * coef[:, None] / n + cfg.entropy_coef * _entropy_grad(p) / n
        agent.opt_actor.step(agent.actor.params, agent.actor.backward(cache, g))
    vloss = agent._critic_step(s, G)
    batch.clear()
    return loss, vloss
