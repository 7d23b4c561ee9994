"""Greedy scheduling baseline and an exhaustive-search oracle for small static instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import env as E
from . import kernels
from .errors import NoActionError, OracleInfeasibleError, UnsupportedConfigError


@dataclass
class EpisodeResult:
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(math.fsum(self.rewards))

    @property
    def steps(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "actions": [int(a) for a in self.actions],
            "rewards": [float(r) for r in self.rewards],
            "total_reward": self.total_reward,
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        return cls(actions=list(d["actions"]), rewards=list(d["rewards"]))


def greedy_action(state: E.EnvState) -> int:
    """Eligible user with the smallest switching penalty; ties go to the lowest index.

    Rewards are negated penalties, so this is the highest-immediate-reward choice.
    """
    a = kernels.masked_argmin(E.penalties(state), E.eligible_mask(state))
    if a < 0:
        raise NoActionError(f"no eligible user at t={state.t}: state is terminal")
    return int(a)


def run_episode(config: E.EnvConfig, policy: Callable[[E.EnvState], int], seed: Optional[int] = None) -> EpisodeResult:
    """Roll out ``policy`` from a fresh reset until the episode ends."""
    state = E.reset(config, seed)
    result = EpisodeResult()
    while not E.is_terminal(state):
        a = policy(state)
        out = E.step(state, a)
        result.actions.append(int(a))
        result.rewards.append(out.reward)
    return result


def run_greedy_episode(config: E.EnvConfig, seed: Optional[int] = None) -> EpisodeResult:
    return run_episode(config, greedy_action, seed)


def _serve_counts(config: E.EnvConfig) -> tuple:
    """Serves each user needs when ``w`` never changes."""
    b, w = config.initial_buffers, config.initial_weights
    counts = []
    for bi, wi in zip(b, w):
        k, rem = 0, float(bi)
        while rem > 0:
            rem = max(0.0, rem - wi)
            k += 1
        counts.append(k)
    return tuple(counts)


def brute_force_optimal(config: E.EnvConfig, node_budget: int = 2_000_000) -> EpisodeResult:
    """Maximum-total-reward schedule by memoized exhaustive search.

    Only static environments are supported: the remaining number of serves
    per user, together with the history, then determines the state exactly.
    Raises :class:`OracleInfeasibleError` if the memo table could exceed
    ``node_budget`` entries.
    """
    config.validate()
    if not config.is_static:
        raise UnsupportedConfigError("brute_force_optimal requires sigma_w == sigma_p == 0")
    n, m = config.n_users, config.memory_window
    P = config.initial_penalty_matrix
    counts = _serve_counts(config)
    bound = math.prod(k + 1 for k in counts) * (n + 1) ** m
    if bound > node_budget:
        raise OracleInfeasibleError(f"search space bound {bound} exceeds node budget {node_budget}")
    max_steps = config.max_steps

    @lru_cache(maxsize=None)
    def value(remaining: tuple, history: tuple, t: int) -> tuple:
        # returns (best achievable future reward, best action or -1)
        if t >= max_steps or not any(remaining):
            return 0.0, -1
        best, best_a = -math.inf, -1
        for a in range(n):
            if remaining[a] == 0:
                continue
            r = 0.0
            for k in history:
                r -= P[a, k]
            nxt = remaining[:a] + (remaining[a] - 1,) + remaining[a + 1:]
            v = r + value(nxt, ((a,) + history)[:m], t + 1)[0]
            if v > best:
                best, best_a = v, a
        return best, best_a

    # drive the real simulator along the argmax path so rewards are the env's own
    remaining, history = counts, ()
    state = E.reset(config)
    result = EpisodeResult()
    while not E.is_terminal(state):
        _, a = value(remaining, history, state.t)
        out = E.step(state, a)
        result.actions.append(a)
        result.rewards.append(out.reward)
        remaining = remaining[:a] + (remaining[a] - 1,) + remaining[a + 1:]
        history = ((a,) + history)[:m]
    return result
