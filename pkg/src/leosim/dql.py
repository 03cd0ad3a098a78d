"""Deep Q-learning built from scratch on numpy: MLP Q-network, ring replay
buffer, target network, linear epsilon schedule, and TD updates with Adam.

The analytic backward pass is checked against central finite differences in
the test suite, so the loss/gradient code must stay a pure function of the
parameters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

N_ACTIONS = 6
GEO_DEST_DIM = 4
CHECKPOINT_MAGIC = b"LEOQCKPT"
CHECKPOINT_VERSION = 1


class NoFeasibleActionError(RuntimeError):
    """Raised when every action is masked out; the caller drops or re-queues."""


@dataclass(frozen=True)
class AgentConfig:
    learning_rate: float = 1e-3
    discount: float = 0.99
    target_sync_steps: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 200_000
    batch_size: int = 64
    replay_capacity: int = 100_000
    pretrain_steps: int = 1_000_000
    queue_weight: float = 0.01       # congestion penalty per queued packet
    hop_weight: float = 0.1          # penalty per hop taken
    delivery_bonus: float = 10.0
    hidden_sizes: tuple = (128, 64)
    delay_scale_ms: float = 25.0
    dest_encoding: str = "geo"       # "geo" | "onehot"
    shared_params: bool = True
    eval_epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount: must be in (0, 1)")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ValueError("epsilon schedule: need 0 <= end <= start <= 1")
        if self.dest_encoding not in ("geo", "onehot"):
            raise ValueError("dest_encoding: must be 'geo' or 'onehot'")


def epsilon_at(step: int, cfg: AgentConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end, constant afterwards."""
    if step >= cfg.epsilon_decay_steps:
        return cfg.epsilon_end
    frac = step / cfg.epsilon_decay_steps
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def reward(queue_len: float, hop_count: float, delivered: bool, cfg: AgentConfig) -> float:
    """Per-transition reward: congestion and hop penalties, delivery bonus."""
    if queue_len < 0 or hop_count < 0:
        raise ValueError("reward: queue_len and hop_count must be >= 0")
    return (-cfg.queue_weight * queue_len
            - cfg.hop_weight * hop_count
            + (cfg.delivery_bonus if delivered else 0.0))


def encode_state(ports, dest_lat_deg: float, dest_lon_deg: float,
                 dest_onehot: np.ndarray | None = None) -> np.ndarray:
    """22-dim observation: 6 queue fill ratios, 6 availability flags, 6
    normalized link delays (port order UT,GW,E,W,Fwd,Bwd), then the
    destination label (sin/cos latitude and longitude, or a one-hot).

    `ports` is a 6-sequence of (active, queue_ratio, delay_norm); inactive
    ports are forced to flag 0, ratio 0, delay 1.0.
    """
    ratios = np.zeros(N_ACTIONS)
    flags = np.zeros(N_ACTIONS)
    delays = np.ones(N_ACTIONS)
    for i, (active, queue_ratio, delay_norm) in enumerate(ports):
        if active:
            flags[i] = 1.0
            ratios[i] = min(max(queue_ratio, 0.0), 1.0)
            delays[i] = min(max(delay_norm, 0.0), 1.0)
    if dest_onehot is not None:
        label = np.asarray(dest_onehot, dtype=float)
    else:
        lat = math.radians(dest_lat_deg)
        lon = math.radians(dest_lon_deg)
        label = np.array([math.sin(lat), math.cos(lat), math.sin(lon), math.cos(lon)])
    return np.concatenate([ratios, flags, delays, label])


class QNetwork:
    """Affine-ReLU stack with a linear head; parameters in float64."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, state_dim: int, hidden_sizes, n_actions: int,
             rng: np.random.Generator) -> "QNetwork":
        """He-style fan-in uniform initialization, zero biases."""
        sizes = [state_dim, *hidden_sizes, n_actions]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def copy_from(self, other: "QNetwork") -> None:
        for i, (w, b) in enumerate(zip(other.weights, other.biases)):
            self.weights[i][...] = w
            self.biases[i][...] = b

    def params(self):
        for i in range(len(self.weights)):
            yield f"W{i}", self.weights[i]
            yield f"b{i}", self.biases[i]

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for _, p in self.params())


def forward(net: QNetwork, s: np.ndarray) -> np.ndarray:
    """Q-values for a single state (d,) or a batch (B, d)."""
    x = np.asarray(s, dtype=float)
    if x.shape[-1] != net.weights[0].shape[0]:
        raise ValueError(
            f"state dimension {x.shape[-1]} != network input {net.weights[0].shape[0]}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x


def _forward_trace(net: QNetwork, x: np.ndarray):
    """Forward pass keeping pre- and post-activation values for backprop."""
    pre, post = [], [x]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = post[-1] @ w + b
        pre.append(z)
        post.append(np.maximum(z, 0.0) if i < last else z)
    return pre, post


def select_action(net: QNetwork, s: np.ndarray, epsilon: float,
                  feasible_mask: np.ndarray, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the feasible actions; greedy ties go to the lowest
    action index. epsilon=0 never consumes the RNG stream."""
    mask = np.asarray(feasible_mask, dtype=bool)
    feasible = np.flatnonzero(mask)
    if feasible.size == 0:
        raise NoFeasibleActionError("all actions masked")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(feasible[rng.integers(feasible.size)])
    q = forward(net, s)
    return int(np.argmax(np.where(mask, q, -np.inf)))


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    feasible_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer; oldest transitions are evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity: must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._pos] = t
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        n = len(self._items)
        if n == 0:
            raise ValueError("sample: buffer is empty")
        k = min(batch_size, n)
        idx = rng.choice(n, size=k, replace=False)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, t: Transition) -> bool:
        return any(item is t for item in self._items)


def _stack_batch(batch: list[Transition]):
    s = np.stack([t.state for t in batch])
    a = np.array([t.action for t in batch], dtype=int)
    r = np.array([t.reward for t in batch], dtype=float)
    s2 = np.stack([t.next_state for t in batch])
    term = np.array([t.terminal for t in batch], dtype=bool)
    feas2 = np.stack([np.asarray(t.feasible_next, dtype=bool) for t in batch])
    return s, a, r, s2, term, feas2


def td_targets(target_net: QNetwork, batch: list[Transition], discount: float) -> np.ndarray:
    """y = r + discount * max over feasible a' of Q_target(s', a'); y = r on
    terminal transitions (and when s' has no feasible action)."""
    _, _, r, s2, term, feas2 = _stack_batch(batch)
    q2 = forward(target_net, s2)
    masked = np.where(feas2, q2, -np.inf)
    max_q2 = masked.max(axis=1)
    max_q2 = np.where(np.isfinite(max_q2), max_q2, 0.0)
    return r + discount * max_q2 * (~term)


def td_loss_and_grads(net: QNetwork, target_net: QNetwork,
                      batch: list[Transition], discount: float):
    """Mean-squared TD error over the batch and its analytic gradients."""
    if not batch:
        raise ValueError("td_loss_and_grads: empty batch")
    s, a, _, _, _, _ = _stack_batch(batch)
    y = td_targets(target_net, batch, discount)
    pre, post = _forward_trace(net, s)
    q = post[-1]
    n = len(batch)
    err = q[np.arange(n), a] - y
    loss = float(np.mean(err ** 2))

    g_out = np.zeros_like(q)
    g_out[np.arange(n), a] = 2.0 * err / n
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    g = g_out
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = post[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grads_w, grads_b


class AdamState:
    """First/second-moment accumulators (beta1=0.9, beta2=0.999, eps=1e-8)."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, net: QNetwork):
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]
        self.t = 0

    def step(self, net: QNetwork, grads_w, grads_b, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t
        for params, grads, m, v in (
            (net.weights, grads_w, self.m_w, self.v_w),
            (net.biases, grads_b, self.m_b, self.v_b),
        ):
            for i, g in enumerate(grads):
                m[i] = self.BETA1 * m[i] + (1.0 - self.BETA1) * g
                v[i] = self.BETA2 * v[i] + (1.0 - self.BETA2) * (g * g)
                params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + self.EPS)


def td_update(net: QNetwork, target_net: QNetwork, batch: list[Transition],
              cfg: AgentConfig, adam: AdamState) -> float:
    """One Adam step on the TD loss; returns the pre-step loss."""
    loss, gw, gb = td_loss_and_grads(net, target_net, batch, cfg.discount)
    adam.step(net, gw, gb, cfg.learning_rate)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    target_net.copy_from(net)


class QAgent:
    """Owns the online/target networks, replay buffer, Adam state, RNG and
    the step/update counters driving the epsilon schedule and target syncs."""

    def __init__(self, cfg: AgentConfig, seed: int, dest_dim: int = GEO_DEST_DIM):
        self.cfg = cfg
        self.dest_dim = dest_dim
        self.state_dim = 3 * N_ACTIONS + dest_dim
        self.rng = np.random.default_rng(seed)
        self.net = QNetwork.init(self.state_dim, cfg.hidden_sizes, N_ACTIONS, self.rng)
        self.target = self.net.copy()
        self.adam = AdamState(self.net)
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.steps = 0          # decisions made under the training policy
        self.updates = 0        # TD updates applied
        self._sync_countdown = cfg.target_sync_steps
        self.eval_count = 0     # greedy Q evaluations (decision cost metric)

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.steps, self.cfg)

    def act_greedy(self, state: np.ndarray, feasible_mask: np.ndarray) -> int:
        self.eval_count += 1
        return select_action(self.net, state, self.cfg.eval_epsilon, feasible_mask, self.rng)

    def act_train(self, state: np.ndarray, feasible_mask: np.ndarray) -> int:
        a = select_action(self.net, state, self.epsilon, feasible_mask, self.rng)
        self.steps += 1
        return a

    def observe(self, t: Transition) -> float | None:
        """Store the transition and apply one TD update (smaller batches are
        allowed only while the buffer is warming up)."""
        self.replay.push(t)
        batch = self.replay.sample(self.cfg.batch_size, self.rng)
        loss = td_update(self.net, self.target, batch, self.cfg, self.adam)
        self.updates += 1
        self._sync_countdown -= 1
        if self._sync_countdown <= 0:
            sync_target(self.net, self.target)
            self._sync_countdown = self.cfg.target_sync_steps
        return loss

    # -- checkpointing ------------------------------------------------------

    def save(self, path) -> None:
        """Versioned binary checkpoint with deterministic bytes: json header
        followed by raw little-endian float64 parameter buffers."""
        arrays = [(name, p) for name, p in self.net.params()]
        header = {
            "version": CHECKPOINT_VERSION,
            "sizes": self.net.sizes,
            "dest_dim": self.dest_dim,
            "steps": self.steps,
            "updates": self.updates,
            "config": asdict(self.cfg),
            "arrays": [{"name": n, "shape": list(p.shape)} for n, p in arrays],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for _, p in arrays:
                f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "QAgent":
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a checkpoint file")
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode())
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
            cfg_raw = dict(header["config"])
            cfg_raw["hidden_sizes"] = tuple(cfg_raw["hidden_sizes"])
            cfg = AgentConfig(**cfg_raw)
            agent = cls(cfg, seed=0, dest_dim=header["dest_dim"])
            params = dict(agent.net.params())
            for spec in header["arrays"]:
                shape = tuple(spec["shape"])
                buf = f.read(8 * int(np.prod(shape)))
                params[spec["name"]][...] = np.frombuffer(buf, dtype="<f8").reshape(shape)
        agent.steps = header["steps"]
        agent.updates = header["updates"]
        agent.target.copy_from(agent.net)
        return agent
