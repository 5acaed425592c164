from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proactive_defense.baselines import (ACAgent, ACTIONS, DQNAgent, DefenseEnv, MLP, PPOAgent, TrainConfig,
                                         TrainingError, ac_step, dqn_step, evaluate_policy, param_count,
                                         ppo_step, ppo_surrogate, train)
from proactive_defense.baselines.agents import _entropy_grad, discounted_returns, softmax
from proactive_defense.baselines.mlp import ShapeError
from proactive_defense.config import ScenarioConfig

SMALL = TrainConfig(hidden=16, batch_size=4, replay_capacity=64)


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f()
        x.flat[i] = old - h
        down = f()
        x.flat[i] = old
        g.flat[i] = (up - down) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def mlp_grad_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n_in, hidden, n_out, batch = (int(v) for v in rng.integers(1, 6, 4))
    net = MLP(n_in, n_out, hidden, seed=seed)
    net.params += rng.normal(0, 0.3, net.size)
    x = rng.normal(size=(batch, n_in))
    c = rng.normal(size=(batch, n_out))
    y, cache = net.forward(x)
    analytic = net.backward(cache, c)
    numeric = fd_grad(lambda: float(np.sum(net(x) * c)), net.params)
    return rel_err(analytic, numeric)


def test_zero_weights_zero_output():
    net = MLP(4, 3, 8, params=np.zeros(param_count(4, 3, 8)))
    assert np.array_equal(net(np.ones(4)), np.zeros(3))


def test_one_one_one_hand_arithmetic():
    # w1=2, b1=0.5, w2=-3, b2=0.25 at x=0.1: -3*tanh(0.7)+0.25
    net = MLP(1, 1, 1, params=np.array([2.0, 0.5, -3.0, 0.25]))
    assert net(np.array([0.1]))[0] == pytest.approx(-3 * math.tanh(0.7) + 0.25, abs=1e-15)


def test_param_count_and_shapes():
    assert param_count(6, 10) == 6 * 256 + 256 + 256 * 10 + 10
    net = MLP(6, 10)
    assert net.size == param_count(6, 10)
    with pytest.raises(ShapeError):
        net(np.ones(5))
    with pytest.raises(ShapeError):
        MLP(2, 2, 2, params=np.zeros(3))
    _, cache = net.forward(np.ones((2, 6)))
    with pytest.raises(ShapeError):
        net.backward(cache, np.ones((3, 10)))


def test_gradient_eight_dim_input():
    rng = np.random.default_rng(0)
    net = MLP(8, 3, 12, seed=1)
    x = rng.normal(size=8)
    c = rng.normal(size=3)
    _, cache = net.forward(x)
    assert rel_err(net.backward(cache, c), fd_grad(lambda: float(net(x) @ c), net.params)) < 1e-4


@given(st.integers(0, 10_000))
def test_gradient_random_shapes(seed):
    assert mlp_grad_error(seed) < 1e-4


def _logits_case(seed: int):
    rng = np.random.default_rng(seed)
    n, k = 5, 4
    z = rng.normal(size=(n, k))
    a = rng.integers(0, k, n)
    adv = rng.normal(size=n)
    return z, a, adv, np.arange(n)


@pytest.mark.parametrize("seed", range(5))
def test_actor_critic_logit_gradient(seed):
    z, a, adv, rows = _logits_case(seed)
    coef = 0.01
    n = len(a)

    def loss():
        p = softmax(z)
        ent = -(p * np.log(p)).sum(axis=1)
        return float(-np.mean(np.log(p[rows, a]) * adv) - coef * np.mean(ent))

    p = softmax(z)
    onehot = np.eye(z.shape[1])[a]
    analytic = -(onehot - p) * adv[:, None] / n + coef * _entropy_grad(p) / n
    assert rel_err(analytic, fd_grad(loss, z)) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_ppo_logit_gradient(seed):
    z, a, adv, rows = _logits_case(seed)
    clip = 0.2
    old = np.log(softmax(z)[rows, a]) + np.random.default_rng(seed).normal(0, 0.3, len(a))
    n = len(a)

    def loss():
        ratio = np.exp(np.log(softmax(z)[rows, a]) - old)
        return float(-np.mean(ppo_surrogate(ratio, adv, clip)))

    p = softmax(z)
    ratio = np.exp(np.log(p[rows, a]) - old)
    active = ratio * adv <= np.clip(ratio, 1 - clip, 1 + clip) * adv
    analytic = -(np.eye(z.shape[1])[a] - p) * np.where(active, ratio * adv, 0.0)[:, None] / n
    assert rel_err(analytic, fd_grad(loss, z)) < 1e-4


def test_ppo_ratio_clipped():
    assert ppo_surrogate(np.array([10.0]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
    assert ppo_surrogate(np.array([0.1]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)


def test_gamma_zero_target_is_reward():
    ag = DQNAgent(6, 10, TrainConfig(gamma=0.0, hidden=8), seed=0)
    r = np.array([1.5, -2.0, 0.0])
    assert np.array_equal(ag.targets(r, np.ones((3, 6)), np.zeros(3)), r)


def test_gamma_zero_regresses_to_reward():
    rng = np.random.default_rng(1)
    ag = DQNAgent(6, 10, TrainConfig(gamma=0.0, hidden=32, lr_policy=3e-3, batch_size=32), seed=1)
    s = rng.uniform(size=(32, 6))
    a = rng.integers(0, 10, 32)
    r = s[:, 0] - s[:, 1]
    for _ in range(1500):
        dqn_step(ag, (s, a, r, s, np.ones(32)))
    q = ag.q(s)[np.arange(32), a]
    assert np.max(np.abs(q - r)) < 0.05


def test_single_transition_converges_monotonically():
    ag = DQNAgent(6, 10, TrainConfig(gamma=0.0, batch_size=1, hidden=16, lr_policy=1e-3), seed=0)
    s, a, r = np.full((1, 6), 0.5), np.array([3]), np.array([1.0])
    errs = []
    for _ in range(300):
        errs.append(abs(ag.q(s[0])[3] - 1.0))
        dqn_step(ag, (s, a, r, s, np.ones(1)))
    # fixed point is Q(s,a) = r; the error never grows until it is within 1e-3
    k = next(i for i, e in enumerate(errs) if e <= 1e-3)
    coarse = errs[:k + 1]
    assert all(b <= a_ for a_, b in zip(coarse, coarse[1:]))
    assert errs[-1] < 1e-4


def test_target_copied_only_at_intervals():
    ag = DQNAgent(6, 10, TrainConfig(hidden=8, target_every=3, batch_size=2), seed=0)
    rng = np.random.default_rng(0)
    batch = (rng.uniform(size=(2, 6)), np.array([0, 1]), np.ones(2), rng.uniform(size=(2, 6)), np.zeros(2))
    prev = ag.target.params.copy()
    for step in range(1, 10):
        dqn_step(ag, batch)
        changed = not np.array_equal(prev, ag.target.params)
        assert changed == (step % 3 == 0)
        if changed:
            assert np.array_equal(ag.target.params, ag.q.params)
        prev = ag.target.params.copy()


@pytest.mark.parametrize("cls,step", [(ACAgent, ac_step), (PPOAgent, ppo_step)])
def test_on_policy_buffer_cleared(cls, step):
    ag = cls(6, 10, SMALL, seed=0)
    for i in range(4):
        ag.act(np.full(6, i / 4))
        ag.record(1.0)
    assert len(ag.buffer) == 4
    step(ag, ag.buffer)
    assert len(ag.buffer) == 0 and ag.buffer.rewards == [] and ag.buffer.logp == []


def test_nan_loss_raises():
    ag = DQNAgent(6, 10, SMALL, seed=0)
    batch = (np.ones((2, 6)), np.array([0, 1]), np.array([np.nan, 1.0]), np.ones((2, 6)), np.ones(2))
    with pytest.raises(TrainingError, match="diagnostics"):
        dqn_step(ag, batch)


def test_discounted_returns():
    assert discounted_returns([1.0, 1.0, 1.0], 0.5).tolist() == [1.75, 1.5, 1.0]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=10, replay_capacity=5).validate()


def test_mlp_save_load(tmp_path):
    net = MLP(3, 2, 4, seed=5)
    net.save(tmp_path / "p.json")
    back = MLP.load(tmp_path / "p.json")
    assert np.array_equal(back.params, net.params)


def test_env_wrapper_shapes():
    env = DefenseEnv(ScenarioConfig())
    obs = env.reset(1)
    assert obs.shape == (6,) and env.n_actions == len(ACTIONS) == 10
    res = env.step(0)
    assert res.obs.shape == (6,) and len(res.survived) == ScenarioConfig().steps_per_round


@pytest.mark.parametrize("kind", ["dqn", "ac", "ppo"])
def test_train_deterministic(kind):
    cfg = TrainConfig(episodes=3, hidden=16, batch_size=8)
    a = train(kind, ScenarioConfig(), cfg, seed=7).curve
    b = train(kind, ScenarioConfig(), cfg, seed=7).curve
    assert a == b and len(a) == 3


def test_random_policy_metrics_in_range():
    m = evaluate_policy("random", ScenarioConfig(), episodes=5, seed=0)
    assert 0.0 <= m["efficacy"] <= 1.0 and 0.0 <= m["surviving_rate"] <= 1.0 and m["cost"] >= 0.0
