"""User-scheduling simulator with switching penalties.

One transmitter serves one of ``N`` users per step. Serving user ``i`` drains
``w[i]`` units from its buffer and costs the sum of ``P[i, k]`` over the users
``k`` served in the last ``m`` steps. The reward is the negated cost. After
every serve, ``w`` and the off-diagonal entries of ``P`` take a clipped
Gaussian random-walk step.

Randomness comes from a single :class:`numpy.random.Generator` (PCG64) per
episode, seeded from the config seed or an explicit override.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, IllegalActionError


@dataclass
class EnvConfig:
    """Full generative description of one environment."""

    n_users: int
    initial_buffers: np.ndarray
    initial_weights: np.ndarray
    initial_penalty_matrix: np.ndarray
    memory_window: int = 2
    sigma_w: float = 0.0
    sigma_p: float = 0.0
    w_bounds: tuple = (0.5, 4.0)
    p_max: float = 10.0
    max_steps: int = 10_000
    seed: int = 0
    normalize_state: bool = True

    def __post_init__(self):
        self.initial_buffers = np.asarray(self.initial_buffers, dtype=np.float64)
        self.initial_weights = np.asarray(self.initial_weights, dtype=np.float64)
        self.initial_penalty_matrix = np.asarray(self.initial_penalty_matrix, dtype=np.float64)
        self.w_bounds = (float(self.w_bounds[0]), float(self.w_bounds[1]))

    @property
    def state_dim(self) -> int:
        return self.n_users + self.n_users**2

    @property
    def is_static(self) -> bool:
        return self.sigma_w == 0 and self.sigma_p == 0

    def validate(self) -> "EnvConfig":
        """Raise :class:`ConfigError` naming the first violated invariant."""
        n = self.n_users
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ConfigError(f"n_users must be a positive integer, got {n!r}")
        if self.initial_buffers.shape != (n,):
            raise ConfigError(f"initial_buffers must have shape ({n},), got {self.initial_buffers.shape}")
        if self.initial_weights.shape != (n,):
            raise ConfigError(f"initial_weights must have shape ({n},), got {self.initial_weights.shape}")
        if self.initial_penalty_matrix.shape != (n, n):
            raise ConfigError(
                f"initial_penalty_matrix must have shape ({n}, {n}), got {self.initial_penalty_matrix.shape}"
            )
        for name in ("initial_buffers", "initial_weights", "initial_penalty_matrix"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"{name} contains non-finite values")
        if np.any(self.initial_buffers < 0):
            raise ConfigError("initial_buffers must be nonnegative")
        if np.any(np.diag(self.initial_penalty_matrix) != 0):
            raise ConfigError("initial_penalty_matrix diagonal must be all zeros")
        w_min, w_max = self.w_bounds
        if not (w_min > 0):
            raise ConfigError(f"w_min must be > 0, got {w_min}")
        if w_max < w_min:
            raise ConfigError(f"w_bounds inverted: {self.w_bounds}")
        if np.any(self.initial_weights < w_min) or np.any(self.initial_weights > w_max):
            raise ConfigError(f"initial_weights outside w_bounds {self.w_bounds}")
        if not (self.p_max > 0):
            raise ConfigError(f"p_max must be > 0, got {self.p_max}")
        P = self.initial_penalty_matrix
        if np.any(P < 0) or np.any(P > self.p_max):
            raise ConfigError(f"initial_penalty_matrix entries outside [0, {self.p_max}]")
        if self.memory_window < 1:
            raise ConfigError(f"memory_window must be >= 1, got {self.memory_window}")
        if self.sigma_w < 0 or self.sigma_p < 0:
            raise ConfigError("sigma_w and sigma_p must be nonnegative")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        return self

    def to_dict(self) -> dict:
        return {
            "n_users": int(self.n_users),
            "initial_buffers": self.initial_buffers.tolist(),
            "initial_weights": self.initial_weights.tolist(),
            "initial_penalty_matrix": self.initial_penalty_matrix.tolist(),
            "memory_window": int(self.memory_window),
            "sigma_w": float(self.sigma_w),
            "sigma_p": float(self.sigma_p),
            "w_bounds": list(self.w_bounds),
            "p_max": float(self.p_max),
            "max_steps": int(self.max_steps),
            "seed": int(self.seed),
            "normalize_state": bool(self.normalize_state),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(f"bad EnvConfig document: {exc}") from exc


@dataclass
class EnvState:
    """Live simulator state. Mutated in place by :func:`step`."""

    config: EnvConfig
    buffers: np.ndarray
    weights: np.ndarray
    penalty_matrix: np.ndarray
    rng: np.random.Generator
    history: list = field(default_factory=list)  # most recent first
    t: int = 0

    @property
    def n_users(self) -> int:
        return self.config.n_users


@dataclass
class StepOutcome:
    reward: float
    next_state_vector: np.ndarray
    terminal: bool
    user: int = -1


def reset(config: EnvConfig, seed: Optional[int] = None) -> EnvState:
    """Start an episode. ``seed`` overrides ``config.seed`` for the dynamics."""
    config.validate()
    return EnvState(
        config=config,
        buffers=config.initial_buffers.copy(),
        weights=config.initial_weights.copy(),
        penalty_matrix=config.initial_penalty_matrix.copy(),
        rng=np.random.default_rng(config.seed if seed is None else seed),
    )


def penalty(state: EnvState, user: int) -> float:
    """Switching cost of serving ``user`` now: sum of ``P[user, k]`` over the history."""
    if not 0 <= user < state.n_users:
        raise IndexError(f"user {user} out of range for {state.n_users} users")
    P = state.penalty_matrix
    p = 0.0
    for k in state.history:
        p += P[user, k]
    return float(p)


def penalties(state: EnvState) -> np.ndarray:
    """Vector of :func:`penalty` for every user."""
    return kernels.penalties(state.penalty_matrix, state.history)


def is_terminal(state: EnvState) -> bool:
    return state.t >= state.config.max_steps or not np.any(state.buffers > 0)


def eligible_actions(state: EnvState) -> set:
    if state.t >= state.config.max_steps:
        return set()
    return {int(i) for i in np.flatnonzero(state.buffers > 0)}


def eligible_mask(state: EnvState) -> np.ndarray:
    """Buffers with ineligible users zeroed; the form the masked-argmax kernels take."""
    if state.t >= state.config.max_steps:
        return np.zeros_like(state.buffers)
    return state.buffers


def advance_dynamics(state: EnvState) -> EnvState:
    """One clipped random-walk step of ``w`` and off-diagonal ``P``."""
    cfg = state.config
    n = cfg.n_users
    xi_w = state.rng.standard_normal(n) if cfg.sigma_w > 0 else np.zeros(n)
    xi_p = state.rng.standard_normal((n, n)) if cfg.sigma_p > 0 else np.zeros((n, n))
    kernels.apply_drift(
        state.weights, state.penalty_matrix, xi_w, xi_p,
        float(cfg.sigma_w), float(cfg.sigma_p),
        cfg.w_bounds[0], cfg.w_bounds[1], float(cfg.p_max),
    )
    return state


def state_vector(state: EnvState) -> np.ndarray:
    """Observation: buffers followed by row-major ``P`` (length ``N + N**2``).

    With ``normalize_state`` the buffers are divided by their initial values
    (0 where the initial value is 0) and ``P`` by ``p_max``.
    """
    cfg = state.config
    if cfg.normalize_state:
        init = cfg.initial_buffers
        b = np.divide(state.buffers, init, out=np.zeros_like(state.buffers), where=init > 0)
        p = state.penalty_matrix.ravel() / cfg.p_max
    else:
        b = state.buffers
        p = state.penalty_matrix.ravel()
    return np.concatenate([b, p])


def step(state: EnvState, user: int) -> StepOutcome:
    """Serve ``user``, then advance the dynamics. Mutates ``state``."""
    user = int(user)
    if not 0 <= user < state.n_users or state.t >= state.config.max_steps or not state.buffers[user] > 0:
        raise IllegalActionError(
            f"user {user} is not eligible at t={state.t} (eligible: {sorted(eligible_actions(state))})"
        )
    reward = -penalty(state, user)
    kernels.serve(state.buffers, state.weights, user)
    state.history.insert(0, user)
    del state.history[state.config.memory_window:]
    advance_dynamics(state)
    state.t += 1
    return StepOutcome(
        reward=reward,
        next_state_vector=state_vector(state),
        terminal=is_terminal(state),
        user=user,
    )


# -- environment suites -------------------------------------------------------


@dataclass
class SuiteRanges:
    """Uniform sampling ranges for :func:`generate_env_suite`."""

    n_users: int = 10
    buffer: tuple = (4.0, 12.0)
    weight: tuple = (1.0, 3.0)
    penalty: tuple = (0.0, 5.0)
    sigma_w: tuple = (0.0, 0.05)
    sigma_p: tuple = (0.0, 0.2)
    w_bounds: tuple = (0.5, 4.0)
    p_max: float = 10.0
    memory_window: int = 2
    max_steps: int = 1000

    def validate(self) -> "SuiteRanges":
        for name in ("buffer", "weight", "penalty", "sigma_w", "sigma_p", "w_bounds"):
            r = getattr(self, name)
            if r is None or len(r) != 2:
                raise ConfigError(f"range {name!r} must be a (min, max) pair, got {r!r}")
            lo, hi = float(r[0]), float(r[1])
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"range {name!r} is not finite: {r!r}")
            if lo > hi:
                raise ConfigError(f"range {name!r} is inverted: {r!r}")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.buffer[0] < 0 or self.penalty[0] < 0 or self.sigma_w[0] < 0 or self.sigma_p[0] < 0:
            raise ConfigError("buffer, penalty and sigma ranges must be nonnegative")
        if self.penalty[1] > self.p_max:
            raise ConfigError(f"penalty range {self.penalty} exceeds p_max={self.p_max}")
        if self.w_bounds[0] <= 0 or not (self.w_bounds[0] <= self.weight[0] and self.weight[1] <= self.w_bounds[1]):
            raise ConfigError(f"weight range {self.weight} must lie within w_bounds {self.w_bounds} with w_min > 0")
        return self

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteRanges":
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(f"bad SuiteRanges document: {exc}") from exc


def generate_env_suite(master_seed: int, count: int, ranges: Optional[SuiteRanges] = None) -> list:
    """Draw ``count`` environment configs uniformly from ``ranges``.

    Each config gets its own seed from a spawned :class:`numpy.random.SeedSequence`,
    so the suite depends only on ``master_seed``.
    """
    ranges = (ranges or SuiteRanges()).validate()
    if count < 0:
        raise ConfigError(f"count must be nonnegative, got {count}")
    n = ranges.n_users
    configs = []
    for child in np.random.SeedSequence(master_seed).spawn(count):
        rng = np.random.default_rng(child)
        P = rng.uniform(*ranges.penalty, size=(n, n))
        np.fill_diagonal(P, 0.0)
        configs.append(
            EnvConfig(
                n_users=n,
                initial_buffers=rng.uniform(*ranges.buffer, size=n),
                initial_weights=rng.uniform(*ranges.weight, size=n),
                initial_penalty_matrix=P,
                memory_window=ranges.memory_window,
                sigma_w=float(rng.uniform(*ranges.sigma_w)),
                sigma_p=float(rng.uniform(*ranges.sigma_p)),
                w_bounds=ranges.w_bounds,
                p_max=ranges.p_max,
                max_steps=ranges.max_steps,
                seed=int(child.generate_state(1, np.uint64)[0]),
            ).validate()
        )
    return configs


def save_suite(configs: Sequence[EnvConfig], path) -> None:
    Path(path).write_text(dumps_suite(configs))


def dumps_suite(configs: Sequence[EnvConfig]) -> str:
    return json.dumps([c.to_dict() for c in configs], indent=1) + "\n"


def load_suite(path) -> list:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [EnvConfig.from_dict(d) for d in data]
