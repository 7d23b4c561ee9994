"""Offline deep Q-learning: sample collection, replay storage and training.

Samples are gathered once by simulation with an epsilon-mixture of uniform
random and greedy actions. Training then only replays the stored tuples; the
simulator is never consulted. The policy network is updated every iteration
and copied into the target network every ``target_update_period`` iterations.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import env as E
from . import kernels
from .baseline import greedy_action
from .errors import CheckpointFormatError, ConfigError, NoActionError, TrainingDivergedError
from .nn import NetArchitecture, QNetwork, backward_batch, forward, init_network, make_optimizer

log = logging.getLogger(__name__)

BUFFER_MAGIC = b"SCHEDQRB"
BUFFER_VERSION = 1


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


def _record_dtype(state_dim: int) -> np.dtype:
    return np.dtype(
        [("s", "<f8", (state_dim,)), ("a", "<i8"), ("r", "<f8"), ("s_next", "<f8", (state_dim,)), ("terminal", "u1")]
    )


def n_users_for_dim(state_dim: int) -> int:
    n = int(round((math.sqrt(1 + 4 * state_dim) - 1) / 2))
    if n + n * n != state_dim:
        raise ValueError(f"state dimension {state_dim} is not of the form N + N**2")
    return n


class ReplayBuffer:
    """Bounded store of transitions; the oldest are evicted past ``capacity``."""

    def __init__(self, n_users: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.n_users = n_users
        self.capacity = capacity
        self.transitions = deque(maxlen=capacity)
        self.episode_lengths = []
        self._arrays = None

    @property
    def state_dim(self) -> int:
        return self.n_users + self.n_users**2

    def __len__(self) -> int:
        return len(self.transitions)

    def __getitem__(self, i) -> Transition:
        return self.transitions[i]

    def append(self, tr: Transition) -> None:
        self.transitions.append(tr)
        self._arrays = None

    def extend(self, trs) -> None:
        for tr in trs:
            self.append(tr)

    def records(self) -> np.ndarray:
        """Structured array view of the contents (cached until the next append)."""
        if self._arrays is None:
            rec = np.zeros(len(self), dtype=_record_dtype(self.state_dim))
            for i, tr in enumerate(self.transitions):
                rec[i] = (tr.s, tr.a, tr.r, tr.s_next, tr.terminal)
            self._arrays = rec
        return self._arrays

    def sample_indices(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        return rng.integers(0, len(self), size=batch_size)

    # -- persistence --

    def dumps(self) -> bytes:
        header = {
            "format_version": BUFFER_VERSION,
            "n_users": self.n_users,
            "state_dim": self.state_dim,
            "count": len(self),
            "capacity": self.capacity,
            "episode_lengths": list(self.episode_lengths),
        }
        h = json.dumps(header, sort_keys=True).encode()
        return BUFFER_MAGIC + struct.pack("<I", len(h)) + h + self.records().tobytes()

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps())

    @classmethod
    def loads(cls, data: bytes, source: str = "<bytes>") -> "ReplayBuffer":
        if data[:8] != BUFFER_MAGIC or len(data) < 12:
            raise CheckpointFormatError(f"{source}: not a replay-buffer file")
        (hlen,) = struct.unpack("<I", data[8:12])
        try:
            header = json.loads(data[12:12 + hlen].decode())
        except ValueError as exc:
            raise CheckpointFormatError(f"{source}: unreadable header: {exc}") from exc
        if header.get("format_version") != BUFFER_VERSION:
            raise CheckpointFormatError(f"{source}: unsupported format_version {header.get('format_version')}")
        dt = _record_dtype(header["state_dim"])
        body = data[12 + hlen:]
        if len(body) != header["count"] * dt.itemsize:
            raise CheckpointFormatError(
                f"{source}: expected {header['count']} records of {dt.itemsize} bytes, got {len(body)} bytes"
            )
        rec = np.frombuffer(body, dtype=dt)
        buf = cls(header["n_users"], header["capacity"])
        for row in rec:
            buf.transitions.append(
                Transition(row["s"].copy(), int(row["a"]), float(row["r"]), row["s_next"].copy(), bool(row["terminal"]))
            )
        buf.episode_lengths = list(header.get("episode_lengths", []))
        return buf

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        return cls.loads(Path(path).read_bytes(), str(path))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            self.to_csv_stream(f)

    def to_csv_stream(self, f) -> None:
        d = self.state_dim
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"s_{i}" for i in range(d)] + ["a", "r"] + [f"s_next_{i}" for i in range(d)] + ["terminal"])
        for tr in self.transitions:
            w.writerow(
                [repr(float(v)) for v in tr.s] + [tr.a, repr(float(tr.r))]
                + [repr(float(v)) for v in tr.s_next] + [int(tr.terminal)]
            )


@dataclass
class TrainConfig:
    gamma: float = 0.95
    target_update_period: int = 500
    step_size: float = 1e-4
    batch_size: int = 64
    train_steps: int = 20_000
    epsilon: float = 0.5
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    sampling: str = "uniform"  # or "sequential": one ordered pass per epoch
    reward_scale: float = 1.0
    init_gain: float = math.sqrt(6.0)

    def validate(self) -> "TrainConfig":
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.target_update_period < 1 or self.batch_size < 1 or self.train_steps < 0:
            raise ConfigError("target_update_period and batch_size must be positive, train_steps nonnegative")
        if not self.step_size > 0 or not self.reward_scale > 0:
            raise ConfigError("step_size and reward_scale must be positive")
        if self.sampling not in ("uniform", "sequential"):
            raise ConfigError(f"sampling must be 'uniform' or 'sequential', got {self.sampling!r}")
        make_optimizer(self.optimizer, self.step_size, self.momentum)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# -- collection ----------------------------------------------------------------


def episode_streams(config: E.EnvConfig, episode_seed: int):
    """Independent (dynamics, policy) generators for one collection episode."""
    env_ss, pol_ss = np.random.SeedSequence([int(episode_seed), int(config.seed)]).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(pol_ss)


def collect_episode(config: E.EnvConfig, episode_seed: int, epsilon: float) -> list:
    env_rng, pol_rng = episode_streams(config, episode_seed)
    state = E.reset(config)
    state.rng = env_rng
    s = E.state_vector(state)
    out = []
    while not E.is_terminal(state):
        if pol_rng.random() < epsilon:
            a = int(pol_rng.choice(sorted(E.eligible_actions(state))))
        else:
            a = greedy_action(state)
        res = E.step(state, a)
        out.append(Transition(s, a, res.reward, res.next_state_vector, res.terminal))
        s = res.next_state_vector
    return out


def _collect_task(args):
    config, episode_seed, epsilon, index = args
    try:
        return collect_episode(config, episode_seed, epsilon)
    except Exception as exc:
        raise type(exc)(f"episode {index}: {exc}") from exc


def collect_samples(
    configs: Sequence[E.EnvConfig],
    episodes_per_env: int,
    epsilon: float = 0.5,
    seed: int = 0,
    capacity: Optional[int] = None,
    jobs: int = 1,
) -> ReplayBuffer:
    """Simulate ``episodes_per_env`` episodes per config and store every transition.

    Episode ``g`` (numbered across all configs) is seeded with ``seed + g``,
    so the buffer is the same for any ``jobs``.
    """
    if not configs:
        raise ConfigError("collect_samples needs at least one environment config")
    if not 0 <= epsilon <= 1:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")
    n = configs[0].n_users
    if any(c.n_users != n for c in configs):
        raise ConfigError("all configs in one buffer must share n_users")
    tasks = [
        (cfg, seed + ci * episodes_per_env + e, epsilon, ci * episodes_per_env + e)
        for ci, cfg in enumerate(configs)
        for e in range(episodes_per_env)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            episodes = list(ex.map(_collect_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        episodes = [_collect_task(t) for t in tasks]
    buf = ReplayBuffer(n, capacity or max(1, sum(len(ep) for ep in episodes)))
    for ep in episodes:
        buf.extend(ep)
        buf.episode_lengths.append(len(ep))
    return buf


# -- targets, training, acting ---------------------------------------------------


def _eligible_from_states(states: np.ndarray, n_users: int) -> np.ndarray:
    return states[..., :n_users] > 0


def td_target(transition: Transition, target_net: QNetwork, gamma: float) -> float:
    """``r`` for terminal transitions, else ``r + gamma * max_a' Q_target(s', a')``.

    The max runs over users that still have data in ``s'``.
    """
    if transition.terminal:
        return float(transition.r)
    q = forward(target_net, transition.s_next)
    mask = _eligible_from_states(np.asarray(transition.s_next), target_net.architecture.output_dim)
    return float(transition.r + gamma * np.max(q[mask]))


def batch_td_targets(rewards, s_next, terminal, target_net: QNetwork, gamma: float) -> np.ndarray:
    targets = np.array(rewards, dtype=np.float64)
    live = ~np.asarray(terminal, dtype=bool)
    if gamma > 0 and live.any():
        q = forward(target_net, s_next[live])
        mask = _eligible_from_states(s_next[live], target_net.architecture.output_dim)
        targets[live] += gamma * np.where(mask, q, -np.inf).max(axis=1)
    return targets


def train(
    buffer: ReplayBuffer,
    arch: NetArchitecture,
    cfg: TrainConfig,
    on_step: Optional[Callable[[int, QNetwork, QNetwork], None]] = None,
):
    """Fit a Q-network to the stored transitions.

    Returns ``(policy_net, losses)`` where ``losses[i]`` is the mean batch
    loss at iteration ``i + 1``, measured before that iteration's update.
    ``on_step(t, policy, target)`` is called after each iteration.
    """
    cfg.validate()
    if len(buffer) == 0:
        raise ConfigError("cannot train on an empty replay buffer")
    if arch.input_dim != buffer.state_dim or arch.output_dim != buffer.n_users:
        raise ValueError(
            f"architecture {arch.input_dim}->{arch.output_dim} does not match buffer "
            f"state_dim={buffer.state_dim}, n_users={buffer.n_users}"
        )
    policy = init_network(arch, cfg.seed, cfg.init_gain)
    target = policy.copy()
    opt = make_optimizer(cfg.optimizer, cfg.step_size, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 1])
    rec = buffer.records()
    S, A, R, S2, T = rec["s"], rec["a"], rec["r"] * cfg.reward_scale, rec["s_next"], rec["terminal"].astype(bool)
    size = len(rec)
    losses = []
    cursor = 0
    for t in range(1, cfg.train_steps + 1):
        if cfg.sampling == "uniform":
            idx = rng.integers(0, size, size=cfg.batch_size)
        else:
            idx = (cursor + np.arange(cfg.batch_size)) % size
            cursor = (cursor + cfg.batch_size) % size
        y = batch_td_targets(R[idx], S2[idx], T[idx], target, cfg.gamma)
        loss, grads = backward_batch(policy, S[idx], A[idx], y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at iteration {t}", iteration=t)
        try:
            opt.update(policy, grads)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"{exc} (iteration {t})", iteration=t) from exc
        losses.append(loss)
        if t % cfg.target_update_period == 0:
            target = policy.copy()
        if on_step is not None:
            on_step(t, policy, target)
    return policy, losses


def act(net: QNetwork, state: E.EnvState) -> int:
    """Greedy action of ``net`` among eligible users; ties go to the lowest index."""
    if net.architecture.output_dim != state.n_users:
        raise ValueError(f"network has {net.architecture.output_dim} outputs but env has {state.n_users} users")
    q = forward(net, E.state_vector(state))
    a = kernels.masked_argmax(q, E.eligible_mask(state))
    if a < 0:
        raise NoActionError(f"no eligible user at t={state.t}: state is terminal")
    return int(a)


def policy_of(net: QNetwork) -> Callable[[E.EnvState], int]:
    def _policy(state):
        return act(net, state)

    return _policy
