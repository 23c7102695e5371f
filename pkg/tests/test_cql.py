import numpy as np
import pytest

from corerl.cql import (CQLConfig, QNetwork, bellman_target, cql_loss, cql_terms, dataset_mean_q,
                        evaluate_policy, train_cql)
from corerl.data import Batch, OfflineDataset, Transition
from corerl.nn import grad_check

from conftest import make_dataset, random_mdp, tabular_dataset, value_iteration


def batch_of(rewards, dones, next_states):
    n = len(rewards)
    return Batch(np.zeros((n, 1)), np.zeros(n, int), np.asarray(rewards, float),
                 np.asarray(next_states, float), np.asarray(dones, bool))


def test_bellman_examples():
    q2 = lambda s: np.array([[2.0, 1.0]] * len(s))
    assert bellman_target(batch_of([1.0], [True], [[0.0]]), q2, 0.9)[0] == 1.0
    assert bellman_target(batch_of([1.0], [False], [[0.0]]), q2, 0.9)[0] == pytest.approx(2.8)
    assert bellman_target(batch_of([0.3, -1], [False, False], [[0], [0]]), q2, 0.0).tolist() == [0.3, -1]


def test_penalty_examples():
    loss, _ = cql_terms(np.zeros((1, 2)), [0], [0.0], 1.0)
    assert loss.penalty == pytest.approx(np.log(2), abs=1e-12) and loss.td == 0.0
    pens = [cql_terms(np.array([[m, 0.0, 0.0]]), [0], [m], 1.0)[0].penalty for m in (5.0, 10.0, 20.0)]
    assert pens[0] > pens[1] > pens[2] > 0 and pens[2] < 1e-8


def test_alpha_zero_is_td():
    rng = np.random.default_rng(0)
    q, a, y = rng.normal(size=(8, 3)), rng.integers(3, size=8), rng.normal(size=8)
    loss, _ = cql_terms(q, a, y, 0.0)
    assert loss.total == loss.td


def test_cql_grad_check():
    rng = np.random.default_rng(1)
    qnet = QNetwork(3, 4, CQLConfig(hidden=(5, 5), dropout=0.2), rng)
    for p_name, p in qnet.net.params().items():
        if p_name.endswith(".b") or p_name.endswith("bn_shift"):
            p[...] = rng.normal(0, 0.1, p.shape)
    batch = make_dataset(8, state_dim=3, action_count=4).batch(np.arange(8))
    y = rng.normal(size=8)

    def loss_fn():
        loss, grads = cql_loss(qnet, batch, y, 1.0, np.random.default_rng(4))
        return loss.total, grads

    assert grad_check(loss_fn, qnet.net.params()).passed


def tabular_cfg(**kw):
    base = dict(alpha=0.0, gamma=0.8, lr=3e-3, batch=64, hidden=(32,), batch_norm=False, dropout=0.0,
                weight_decay=0.0, target_sync_interval=100, train_steps=4000, log_every=500)
    base.update(kw)
    return CQLConfig(**base)


def test_tabular_two_state_matches_value_iteration():
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 0] = P[1, 1, 1] = 1.0
    R = np.array([[0.0, -0.2], [1.0, 0.5]])
    ds, P_hat = tabular_dataset(P, R, 20, np.random.default_rng(0))
    qnet, _ = train_cql(ds, tabular_cfg(seed=0))
    expected = value_iteration(P_hat, R, 0.8).argmax(axis=1)
    assert [qnet.act(np.eye(2)[s]) for s in range(2)] == expected.tolist()


def test_ood_action_pessimism():
    # state 0 only ever shows action 0; action 1 is never observed there
    eye = np.eye(2)
    trans = [Transition(eye[0], 0, 0.5, eye[1], False, i, 0) for i in range(40)]
    trans += [Transition(eye[1], i % 2, 0.0, eye[0], False, 40 + i, 0) for i in range(40)]
    ds = OfflineDataset.from_transitions(trans, env_id="t", state_dim=2, action_count=2)
    qnet, _ = train_cql(ds, tabular_cfg(alpha=10.0, train_steps=2000))
    q = qnet.q_values(eye[0])[0]
    assert q[1] < q[0]


def test_mean_q_non_increasing_in_alpha():
    rng = np.random.default_rng(2)
    P, R = random_mdp(rng, 3, 2)
    ds, _ = tabular_dataset(P, R, 10, rng)
    means = [dataset_mean_q(train_cql(ds, tabular_cfg(alpha=a, train_steps=1500))[0], ds)
             for a in (0.0, 1.0, 5.0)]
    assert means[0] >= means[1] >= means[2]


def test_train_cql_deterministic_and_history():
    ds = make_dataset(40, state_dim=3, action_count=3)
    cfg = CQLConfig(train_steps=250, hidden=(8, 8), log_every=100, seed=3)
    a, hist_a = train_cql(ds, cfg)
    b, hist_b = train_cql(ds, cfg)
    assert hist_a == hist_b
    assert [h[0] for h in hist_a] == [100, 200, 250]
    x = ds.states[:5]
    assert np.array_equal(a.q_values(x), b.q_values(x))


def test_config_validation():
    with pytest.raises(ValueError):
        CQLConfig(gamma=1.0)
    with pytest.raises(ValueError):
        CQLConfig(alpha=-1)
    with pytest.raises(ValueError, match="quantile"):
        CQLConfig(quantiles=100)


class ConstantEnv:
    state_dim = 2
    action_count = 3

    def __init__(self, reward=-0.25, length=7):
        self.reward, self.length = reward, length

    def reset(self, seed=None):
        self.t = 0
        return np.zeros(2)

    def step(self, action):
        self.t += 1
        return np.zeros(2), self.reward, self.t >= self.length


def test_evaluate_constant_env():
    qnet = QNetwork(2, 3, CQLConfig(hidden=(4,)))
    rep = evaluate_policy(qnet, ConstantEnv, n_seeds=2, n_trials=3)
    assert rep.returns.shape == (2, 3) and np.allclose(rep.returns, -0.25 * 7)
    assert rep.mean == pytest.approx(rep.returns.mean()) and rep.avg_step_reward == pytest.approx(-0.25)
    assert np.array_equal(evaluate_policy(qnet, ConstantEnv, 2, 3).returns, rep.returns)


def test_evaluate_dim_mismatch():
    with pytest.raises(ValueError, match="dim"):
        evaluate_policy(QNetwork(5, 3), ConstantEnv, 1, 1)


def test_checkpoint_round_trip(tmp_path):
    ds = make_dataset(30, state_dim=3, action_count=3)
    qnet, _ = train_cql(ds, CQLConfig(train_steps=50, hidden=(8, 8)))
    qnet.save(tmp_path / "q.jsonl")
    back = QNetwork.load(tmp_path / "q.jsonl")
    assert np.array_equal(back.q_values(ds.states), qnet.q_values(ds.states))
    assert np.array_equal(back.target_q_values(ds.states), qnet.target_q_values(ds.states))
