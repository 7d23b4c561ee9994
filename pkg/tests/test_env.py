import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schedq import env as E
from schedq.errors import ConfigError, IllegalActionError

from conftest import P3, static_config


def test_penalty_zero_matrix():
    cfg = static_config([1.0, 1.0, 1.0], P=np.zeros((3, 3)))
    s = E.reset(cfg)
    s.history = [0, 1]
    assert [E.penalty(s, u) for u in range(3)] == [0.0, 0.0, 0.0]


def test_penalty_direct_substitution():
    P = np.zeros((3, 3))
    P[2, 0], P[2, 1] = 1.5, 0.25
    s = E.reset(static_config([1.0, 1.0, 1.0], P=P))
    s.history = [0, 1]
    assert E.penalty(s, 2) == 1.75


def test_penalty_repeated_self_is_zero():
    s = E.reset(static_config([1.0] * 4, P=np.full((4, 4), 3.0) - 3.0 * np.eye(4)))
    s.history = [3, 3]
    assert E.penalty(s, 3) == 0.0
    assert E.penalty(s, 0) == 6.0  # duplicates count twice


def test_penalty_range_check(env3):
    with pytest.raises(IndexError):
        E.penalty(E.reset(env3), 3)


def test_reset_fresh_and_deterministic(env3):
    a, b = E.reset(env3), E.reset(env3)
    assert a.history == [] and a.t == 0
    assert np.array_equal(a.buffers, b.buffers)
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


@pytest.mark.parametrize(
    "change, msg",
    [
        (dict(initial_penalty_matrix=[[1.0, 1.0], [1.0, 0.0]]), "diagonal"),
        (dict(w_bounds=(0.0, 2.0)), "w_min"),
        (dict(initial_weights=[5.0, 1.0]), "w_bounds"),
        (dict(initial_penalty_matrix=[[0.0, 11.0], [1.0, 0.0]]), "outside"),
        (dict(initial_buffers=[-1.0, 1.0]), "nonnegative"),
        (dict(memory_window=0), "memory_window"),
    ],
)
def test_invalid_config(change, msg):
    base = dict(n_users=2, initial_buffers=[1.0, 1.0], initial_weights=[1.0, 1.0],
                initial_penalty_matrix=[[0.0, 1.0], [1.0, 0.0]], w_bounds=(0.5, 4.0), p_max=10.0)
    base.update(change)
    with pytest.raises(ConfigError, match=msg):
        E.reset(E.EnvConfig(**base))


def test_eligible_actions():
    cfg = static_config([1.0, 1.0, 5.0])
    s = E.reset(cfg)
    assert E.eligible_actions(s) == {0, 1, 2}
    s.buffers[:] = [0, 0, 5]
    assert E.eligible_actions(s) == {2}
    s.buffers[:] = 0
    assert E.eligible_actions(s) == set() and E.is_terminal(s)


def test_step_clamps_and_terminates():
    cfg = static_config([2.0, 0.0, 0.0], weights=[3.0, 1.0, 1.0])
    s = E.reset(cfg)
    out = E.step(s, 0)
    assert out.terminal and np.all(s.buffers == 0)
    assert out.reward == 0.0  # empty history on the first step


def test_step_scripted_rewards():
    s = E.reset(static_config([2.0, 2.0, 2.0]))
    rewards = [E.step(s, u).reward for u in (0, 2, 1)]
    assert rewards == [0.0, -P3[2][0], -(P3[1][2] + P3[1][0])]
    assert rewards == [0.0, -5.0, -7.0]
    assert s.history == [1, 2]


def test_step_illegal_action(env3):
    s = E.reset(env3)
    s.buffers[1] = 0
    with pytest.raises(IllegalActionError):
        E.step(s, 1)
    with pytest.raises(IllegalActionError):
        E.step(s, 7)


def test_max_steps_terminates():
    s = E.reset(static_config([5.0, 5.0, 5.0], max_steps=2))
    E.step(s, 0)
    out = E.step(s, 0)
    assert out.terminal and E.eligible_actions(s) == set()
    with pytest.raises(IllegalActionError):
        E.step(s, 1)


def test_static_dynamics_unchanged(env3):
    s = E.reset(env3)
    w, P = s.weights.copy(), s.penalty_matrix.copy()
    E.advance_dynamics(s)
    assert np.array_equal(w, s.weights) and np.array_equal(P, s.penalty_matrix)


def test_drift_clipping_bounds():
    cfg = static_config([1.0] * 4, P=np.full((4, 4), 9.5) - 9.5 * np.eye(4), weights=[0.6] * 4,
                        sigma_w=5.0, sigma_p=5.0)
    s = E.reset(cfg)
    for _ in range(200):
        E.advance_dynamics(s)
        assert np.all((s.weights >= 0.5) & (s.weights <= 4.0))
        assert np.all((s.penalty_matrix >= 0) & (s.penalty_matrix <= 10.0))
        assert np.all(np.diag(s.penalty_matrix) == 0)


def test_drift_increment_statistics():
    # far from the clip bounds the increments are raw N(0, sigma_p^2) draws
    n, sigma = 3, 0.1
    P0 = np.full((n, n), 50.0) - 50.0 * np.eye(n)
    cfg = static_config([1.0] * n, P=P0, sigma_p=sigma, p_max=100.0)
    s = E.reset(cfg, seed=2024)
    incs = []
    for _ in range(1000):
        before = s.penalty_matrix.copy()
        E.advance_dynamics(s)
        incs.append((s.penalty_matrix - before)[~np.eye(n, dtype=bool)])
    incs = np.concatenate(incs)
    assert s.penalty_matrix[~np.eye(n, dtype=bool)].min() > 0  # never clipped
    assert abs(incs.mean()) < 0.1 * sigma
    assert abs(incs.std() / sigma - 1) < 0.1


def test_state_vector_layout():
    cfg = E.generate_env_suite(0, 1)[0]
    s = E.reset(cfg)
    v = E.state_vector(s)
    assert v.shape == (110,)
    assert np.all(v[:10] == 1.0)
    assert np.array_equal(v[10:], cfg.initial_penalty_matrix.ravel() / cfg.p_max)
    z = E.reset(static_config([1.0, 0.0, 2.0], P=np.zeros((3, 3))))
    vz = E.state_vector(z)
    assert np.array_equal(vz, [1.0, 0.0, 1.0] + [0.0] * 9)


def test_state_vector_raw_mode():
    s = E.reset(static_config([2.0, 1.0, 1.0], normalize_state=False))
    assert np.array_equal(E.state_vector(s), np.concatenate([[2.0, 1.0, 1.0], np.ravel(P3)]))


def test_suite_generation():
    a, b = E.generate_env_suite(7, 16), E.generate_env_suite(7, 16)
    assert len(a) == 16
    assert E.dumps_suite(a) == E.dumps_suite(b)
    assert len({c.seed for c in a}) == 16
    assert E.generate_env_suite(7, 0) == []
    assert E.dumps_suite(E.generate_env_suite(8, 16)) != E.dumps_suite(a)


def test_suite_ranges_validated():
    with pytest.raises(ConfigError, match="inverted"):
        E.generate_env_suite(0, 2, E.SuiteRanges(buffer=(5.0, 1.0)))
    with pytest.raises(ConfigError):
        E.generate_env_suite(0, 2, E.SuiteRanges(penalty=(0.0, 20.0)))


def test_suite_json_roundtrip(tmp_path):
    suite = E.generate_env_suite(3, 4)
    path = tmp_path / "suite.json"
    E.save_suite(suite, path)
    back = E.load_suite(path)
    assert E.dumps_suite(back) == E.dumps_suite(suite)
    doc = json.loads(path.read_text())
    assert set(doc[0]) >= {"n_users", "initial_buffers", "initial_weights", "initial_penalty_matrix",
                           "memory_window", "sigma_w", "sigma_p", "w_bounds", "p_max", "max_steps", "seed"}


# -- properties ------------------------------------------------------------------


def _random_config(seed, static=False):
    ranges = E.SuiteRanges(n_users=int(np.random.default_rng(seed).integers(1, 7)),
                           sigma_w=(0.0, 0.0 if static else 0.5), sigma_p=(0.0, 0.0 if static else 2.0))
    return E.generate_env_suite(seed, 1, ranges)[0]


def _rollout(cfg, action_seed):
    rng = np.random.default_rng(action_seed)
    s = E.reset(cfg)
    rewards = []
    while not E.is_terminal(s):
        out = E.step(s, int(rng.choice(sorted(E.eligible_actions(s)))))
        rewards.append(out.reward)
    return s, rewards


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_episode_terminates_within_bound(seed):
    cfg = _random_config(seed)
    s, rewards = _rollout(cfg, seed)
    bound = math.ceil(cfg.initial_buffers.sum() / cfg.w_bounds[0]) + cfg.n_users
    assert len(rewards) <= min(bound, cfg.max_steps)
    assert all(r <= 0 for r in rewards)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_replay_determinism(seed):
    cfg = _random_config(seed)
    s1, r1 = _rollout(cfg, seed)
    s2, r2 = _rollout(cfg, seed)
    assert r1 == r2
    assert np.array_equal(s1.penalty_matrix, s2.penalty_matrix) and np.array_equal(s1.weights, s2.weights)


def test_zero_penalty_total_is_zero():
    cfg = _random_config(5)
    cfg.initial_penalty_matrix = np.zeros_like(cfg.initial_penalty_matrix)
    cfg.sigma_p = 0.0
    assert sum(_rollout(cfg, 1)[1]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_penalty_depends_only_on_own_row(seed):
    rng = np.random.default_rng(seed)
    cfg = _random_config(seed, static=True)
    n = cfg.n_users
    s = E.reset(cfg)
    s.history = list(rng.integers(0, n, size=min(2, n)))
    u = int(rng.integers(n))
    before = E.penalty(s, u)
    others = [i for i in range(n) if i != u]
    perm = rng.permutation(np.array(others, dtype=int))
    s.penalty_matrix[others] = s.penalty_matrix[perm]
    assert E.penalty(s, u) == before
