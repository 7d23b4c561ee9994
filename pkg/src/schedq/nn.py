"""Fully-connected Q-network with hand-written backpropagation.

Layers compute ``a @ W + b`` with ``W`` stored fan_in x fan_out. Hidden layers
use ReLU, the output layer is linear. Everything is float64.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointFormatError, ConfigError, TrainingDivergedError

CHECKPOINT_MAGIC = b"SCHEDQNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetArchitecture:
    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int

    def validate(self) -> "NetArchitecture":
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        return self

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def parameter_count(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {k: int(getattr(self, k)) for k in ("input_dim", "hidden_layers", "hidden_width", "output_dim")}


def full_profile(n_users: int = 10) -> NetArchitecture:
    """Ten hidden layers of 1024 units."""
    return NetArchitecture(n_users + n_users**2, 10, 1024, n_users)


def test_profile(n_users: int = 10) -> NetArchitecture:
    """Three hidden layers of 256 units; the default for desk-scale runs."""
    return NetArchitecture(n_users + n_users**2, 3, 256, n_users)


PROFILES = {"full": full_profile, "test": test_profile}


@dataclass
class Gradients:
    weights: list
    biases: list

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def scaled(self, c: float) -> "Gradients":
        return Gradients([c * g for g in self.weights], [c * g for g in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class QNetwork:
    architecture: NetArchitecture
    weights: list
    biases: list
    seed: Optional[int] = None

    def copy(self) -> "QNetwork":
        return QNetwork(
            self.architecture,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def parameters(self) -> list:
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parameters()])

    def __call__(self, x):
        return forward(self, x)


def init_network(arch: NetArchitecture, seed: int, gain: float = math.sqrt(6.0)) -> QNetwork:
    """Weights ~ U(-gain/sqrt(fan_in), gain/sqrt(fan_in)), biases zero.

    The default gain gives He-uniform scaling, which keeps activations from
    vanishing through the ten-layer ReLU stack.
    """
    arch.validate()
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = gain / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetwork(arch, weights, biases, seed)


def _check_input(net: QNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.architecture.input_dim,) or x.ndim > 2:
        raise ValueError(f"input shape {x.shape} does not match input_dim {net.architecture.input_dim}")
    return x


def _forward_trace(net: QNetwork, x: np.ndarray):
    """Forward pass keeping each layer's input and hidden pre-activations."""
    inputs, pre = [], []
    a = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ W + b
        if i < last:
            pre.append(z)
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a, inputs, pre


def forward(net: QNetwork, state) -> np.ndarray:
    """Q-values for a single state (shape ``(input_dim,)``) or a batch ``(B, input_dim)``."""
    x = _check_input(net, state)
    return _forward_trace(net, x)[0]


def backward_batch(net: QNetwork, states, actions, td_targets):
    """Mean over the batch of ``0.5 * (Q(s, a) - target)**2`` and its exact gradient."""
    x = _check_input(net, states)
    if x.ndim == 1:
        x = x[None, :]
    actions = np.asarray(actions, dtype=np.intp).reshape(-1)
    targets = np.asarray(td_targets, dtype=np.float64).reshape(-1)
    B = x.shape[0]
    if actions.shape != (B,) or targets.shape != (B,):
        raise ValueError("states, actions and td_targets must have matching batch size")
    if not np.all(np.isfinite(targets)):
        raise ValueError("td_target must be finite")
    if np.any(actions < 0) or np.any(actions >= net.architecture.output_dim):
        raise IndexError(f"action out of range for output_dim {net.architecture.output_dim}")

    q, inputs, pre = _forward_trace(net, x)
    rows = np.arange(B)
    delta = q[rows, actions] - targets
    with np.errstate(over="ignore"):  # an inf loss is reported by the caller as divergence
        loss = 0.5 * float(np.mean(delta * delta))

    dz = np.zeros_like(q)
    dz[rows, actions] = delta / B
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = inputs[i].T @ dz
        gb[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ net.weights[i].T) * (pre[i - 1] > 0)
    return loss, Gradients(gw, gb)


def backward(net: QNetwork, state, action: int, td_target: float):
    """Loss ``0.5 * (Q(state)[action] - td_target)**2`` and its gradient for one sample."""
    if not math.isfinite(td_target):
        raise ValueError(f"td_target must be finite, got {td_target}")
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise ValueError("backward takes a single state; use backward_batch for batches")
    return backward_batch(net, state[None, :], [action], [td_target])


def _grad_arrays(grads: Gradients) -> list:
    return [a for pair in zip(grads.weights, grads.biases) for a in pair]


def apply_update(net: QNetwork, grads: Gradients, step_size: float) -> QNetwork:
    """Plain gradient step, in place. Returns ``net``."""
    params, gs = net.parameters(), _grad_arrays(grads)
    if len(params) != len(gs) or any(p.shape != g.shape for p, g in zip(params, gs)):
        raise ValueError("gradients are not shape-congruent with the network")
    if step_size < 0:
        raise ValueError(f"step_size must be nonnegative, got {step_size}")
    for p, g in zip(params, gs):
        p -= step_size * g
    _ensure_finite(net)
    return net


def _ensure_finite(net: QNetwork) -> None:
    for i, p in enumerate(net.parameters()):
        if not np.all(np.isfinite(p)):
            raise TrainingDivergedError(f"non-finite value in parameter block {i} after update")


@dataclass
class Momentum:
    """Heavy-ball gradient descent: ``v <- mu*v + g; p <- p - lr*v``."""

    step_size: float
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    def update(self, net: QNetwork, grads: Gradients) -> QNetwork:
        gs = _grad_arrays(grads)
        if not self.velocity:
            self.velocity = [np.zeros_like(g) for g in gs]
        for p, v, g in zip(net.parameters(), self.velocity, gs):
            v *= self.momentum
            v += g
            p -= self.step_size * v
        _ensure_finite(net)
        return net


@dataclass
class Adam:
    """Adam with bias correction."""

    step_size: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def update(self, net: QNetwork, grads: Gradients) -> QNetwork:
        gs = _grad_arrays(grads)
        if not self.m:
            self.m = [np.zeros_like(g) for g in gs]
            self.v = [np.zeros_like(g) for g in gs]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v, g in zip(net.parameters(), self.m, self.v, gs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.step_size * (m / c1) / (np.sqrt(v / c2) + self.eps)
        _ensure_finite(net)
        return net


@dataclass
class PlainSGD:
    step_size: float

    def update(self, net: QNetwork, grads: Gradients) -> QNetwork:
        return apply_update(net, grads, self.step_size)


def make_optimizer(name: str, step_size: float, momentum: float = 0.9):
    if name == "sgd":
        return PlainSGD(step_size)
    if name == "momentum":
        return Momentum(step_size, momentum)
    if name == "adam":
        return Adam(step_size)
    raise ConfigError(f"unknown optimizer {name!r} (expected sgd, momentum or adam)")


# -- checkpoints ---------------------------------------------------------------
#
# layout: 8-byte magic, uint32 LE header length, UTF-8 JSON header, then each
# parameter block (W0, b0, W1, b1, ...) as little-endian float64, row-major.


def dumps_checkpoint(net: QNetwork, extra: Optional[dict] = None) -> bytes:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": net.architecture.to_dict(),
        "seed": net.seed,
        "dtype": "<f8",
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters()]
    return b"".join(parts)


def loads_checkpoint(data: bytes, source: str = "<bytes>") -> QNetwork:
    if len(data) < 12 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic bytes, not a checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    if 12 + hlen > len(data):
        raise CheckpointFormatError(f"{source}: header truncated (need {hlen} bytes at offset 12)")
    try:
        header = json.loads(data[12:12 + hlen].decode())
        arch = NetArchitecture(**header["architecture"]).validate()
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{source}: unsupported format_version {header.get('format_version')}")
    sizes = arch.layer_sizes
    offset = 12 + hlen
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        for kind, shape in (("weights", (fan_in, fan_out)), ("biases", (fan_out,))):
            nbytes = 8 * math.prod(shape)
            if offset + nbytes > len(data):
                raise CheckpointFormatError(
                    f"{source}: truncated in layer {layer} {kind} at byte offset {offset} "
                    f"(need {nbytes} bytes, {len(data) - offset} available)"
                )
            arr = np.frombuffer(data, dtype="<f8", count=math.prod(shape), offset=offset)
            (weights if kind == "weights" else biases).append(arr.reshape(shape).astype(np.float64))
            offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError(f"{source}: {len(data) - offset} trailing bytes after offset {offset}")
    return QNetwork(arch, weights, biases, header.get("seed"))


def checkpoint_header(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not a checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    return json.loads(data[12:12 + hlen].decode())


def save_checkpoint(net: QNetwork, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(net, extra))


def load_checkpoint(path) -> QNetwork:
    return loads_checkpoint(Path(path).read_bytes(), str(path))
