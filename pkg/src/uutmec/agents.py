"""Actor-critic agents: traditional, user-centered, task-centered, UUT, random.

All learned agents share one engine. An agent owns one or more actors, each a
shared tanh trunk ending in independent linear tails (one categorical head per
decision slot), and one critic with several value heads over the
concatenation of all task states. What distinguishes the architectures is:

* how actors are laid out (one actor over everything vs. one actor per task);
* how many value heads the critic has and which head's advantage drives each
  actor tail;
* which reward vector is fed to the value heads.

Decision slots are indexed by (task k, entity i). Value heads per algorithm:

==============  ==================  ===============================
algorithm       value heads         slot (k, i) uses head
==============  ==================  ===============================
traditional     1                   0
user_centered   N                   i
task_centered   K (+ global)        k
uut             N*K (+ global)      k*N + i
==============  ==================  ===============================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TrainingDivergence
from .numerics import (AdamState, MlpParams, RngStream, adam_step, clip_grad_norm, init_mlp,
                       log_softmax, mlp_backward, mlp_forward, softmax)

ALGORITHMS = ("traditional", "user_centered", "task_centered", "uut", "random")
GLOBAL_REWARD_MODES = ("standardized_mean", "mean", "sum")


@dataclass
class AgentConfig:
    algorithm: str = "user_centered"
    hidden_sizes: list = field(default_factory=lambda: [128, 128])
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    global_mix: float = 0.5
    global_head: bool = True
    global_reward: str = "standardized_mean"
    clip: bool = False
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 1
    max_grad_norm: float = 5.0
    normalize_advantages: bool = False

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"agent.algorithm must be one of {ALGORITHMS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("agent.gamma violates 0 ≤ γ ≤ 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("agent.gae_lambda violates 0 ≤ λ ≤ 1")
        if self.global_mix < 0.0:
            raise ConfigError("agent.global_mix violates λ_g ≥ 0")
        if self.clip and not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("agent.clip_eps violates 0 < ε_clip < 1")
        if self.global_reward not in GLOBAL_REWARD_MODES:
            raise ConfigError(f"agent.global_reward must be one of {GLOBAL_REWARD_MODES}")
        if not self.lr > 0:
            raise ConfigError("agent.lr must be positive")
        if self.epochs < 1:
            raise ConfigError("agent.epochs must be >= 1")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("agent.entropy_coef and agent.value_coef must be non-negative")
        if not self.hidden_sizes or any(int(h) < 1 for h in self.hidden_sizes):
            raise ConfigError("agent.hidden_sizes must be a non-empty list of positive integers")


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

@dataclass
class Transition:
    states: list[np.ndarray]
    actions: list[np.ndarray]
    log_probs: list[np.ndarray]
    rewards: np.ndarray
    next_states: list[np.ndarray]
    terminal: bool


class Rollout:
    """Ordered transitions, possibly spanning several episodes."""

    def __init__(self):
        self.transitions: list[Transition] = []

    def append(self, tr: Transition) -> None:
        if self.transitions and len(tr.rewards) != len(self.transitions[0].rewards):
            raise ShapeError("reward vector length changed within a rollout")
        if any(not np.all(np.isfinite(lp)) for lp in tr.log_probs):
            raise ValueError("non-finite log-probability in transition")
        self.transitions.append(tr)

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def episode_ends(self) -> list[int]:
        return [t for t, tr in enumerate(self.transitions) if tr.terminal]

    def batch(self) -> dict:
        if not self.transitions:
            raise ValueError("empty rollout")
        trs = self.transitions
        n_blocks = len(trs[0].states)
        return {
            "states": [np.stack([tr.states[k] for tr in trs]) for k in range(n_blocks)],
            "actions": [np.stack([tr.actions[k] for tr in trs]) for k in range(len(trs[0].actions))],
            "log_probs": [np.stack([tr.log_probs[k] for tr in trs]) for k in range(len(trs[0].log_probs))],
            "rewards": np.stack([np.asarray(tr.rewards, dtype=np.float64) for tr in trs]),
            "terminals": np.array([tr.terminal for tr in trs]),
            "last_next_states": trs[-1].next_states,
        }


@dataclass
class CriticOutputs:
    values: np.ndarray
    n_heads: int
    has_global: bool

    @property
    def per_head(self) -> np.ndarray:
        return self.values[..., : self.n_heads]

    @property
    def global_value(self):
        return self.values[..., -1] if self.has_global else None


@dataclass
class UpdateStats:
    actor_losses: np.ndarray
    critic_losses: np.ndarray
    advantages: np.ndarray
    entropy: float
    global_loss: float | None = None

    @property
    def actor_loss(self) -> float:
        return float(np.sum(self.actor_losses))

    @property
    def critic_loss(self) -> float:
        return float(np.sum(self.critic_losses) + (self.global_loss or 0.0))


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------

def compute_advantages(values, rewards, gamma: float, lam: float, terminals=None,
                       last_value=None, head: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation, vectorized over heads.

    ``values`` and ``rewards`` are (T,) or (T, H). The value after a terminal
    step is 0; after the final step of a non-terminal rollout it is
    ``last_value`` (0 when omitted). Returns (advantages, value targets),
    restricted to column ``head`` if given.
    """
    v = np.asarray(values, dtype=np.float64)
    r = np.asarray(rewards, dtype=np.float64)
    if v.shape != r.shape:
        raise ShapeError(f"values {v.shape} and rewards {r.shape} differ in shape")
    T = r.shape[0]
    term = np.zeros(T, dtype=bool) if terminals is None else np.asarray(terminals, dtype=bool)
    if term.shape != (T,):
        raise ShapeError("terminal flags must have one entry per step")
    boot = np.zeros(r.shape[1:]) if last_value is None else np.asarray(last_value, dtype=np.float64)
    adv = np.zeros_like(r)
    running = np.zeros(r.shape[1:])
    for t in range(T - 1, -1, -1):
        if term[t]:
            nxt = 0.0
            running = np.zeros(r.shape[1:])
        else:
            nxt = v[t + 1] if t + 1 < T else boot
        delta = r[t] + gamma * nxt - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
    targets = adv + v
    if head is not None:
        return adv[:, head], targets[:, head]
    return adv, targets


def clipped_surrogate(ratio, adv, eps: float) -> np.ndarray:
    """Per-sample min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


class RunningStandardizer:
    """Welford running mean/variance per reward component."""

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def standardize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.count < 2:
            return x - self.mean
        std = np.sqrt(self.m2 / (self.count - 1))
        return (x - self.mean) / np.maximum(std, 1e-8)


def global_reward(task_rewards, mode: str, standardizer: RunningStandardizer | None = None) -> float:
    """The global reward r_g from per-task rewards.

    ``standardized_mean`` folds the new rewards into the running statistics
    first, then averages the standardized values.
    """
    r = np.asarray(task_rewards, dtype=np.float64)
    if mode == "sum":
        return float(r.sum())
    if mode == "mean":
        return float(r.mean())
    if mode == "standardized_mean":
        if standardizer is None:
            raise ValueError("standardized_mean needs a running standardizer")
        standardizer.update(r)
        return float(standardizer.standardize(r).mean())
    raise ValueError(f"unknown global reward mode {mode!r}")


# ---------------------------------------------------------------------------
# Learned agents
# ---------------------------------------------------------------------------

def _head_entropy(logp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return -np.sum(p * logp, axis=-1)


class ActorCritic:
    """Multi-head actor-critic engine configured per architecture.

    Parameters
    ----------
    cfg : AgentConfig
    state_dims : list[int]
        Dimension of each task's state block.
    action_sizes : list[list[int]]
        ``action_sizes[k][i]`` is the number of choices for entity i in task k.
    seed : int
        Initialization seed; streams are labeled ``actor/<j>`` and ``critic``.
    """

    def __init__(self, cfg: AgentConfig, state_dims, action_sizes, seed: int = 0):
        cfg.validate()
        if cfg.algorithm == "random":
            raise ConfigError("use RandomAgent for the random baseline")
        self.cfg = cfg
        self.algorithm = cfg.algorithm
        self.state_dims = [int(d) for d in state_dims]
        self.action_sizes = [[int(a) for a in row] for row in action_sizes]
        K = len(self.action_sizes)
        if K < 1 or len(self.state_dims) != K:
            raise ConfigError("need one state block per task")
        N = len(self.action_sizes[0])
        if any(len(row) != N for row in self.action_sizes):
            raise ConfigError("every task must have one decision per entity")
        self.n_tasks, self.n_entities = K, N
        hidden = [int(h) for h in cfg.hidden_sizes]

        per_task = self.algorithm in ("task_centered", "uut")
        # actor j -> list of (task k, entity i) slots, and which task states it reads
        if per_task:
            self.actor_slots = [[(k, i) for i in range(N)] for k in range(K)]
            self.actor_inputs = [[k] for k in range(K)]
        else:
            self.actor_slots = [[(k, i) for k in range(K) for i in range(N)]]
            self.actor_inputs = [list(range(K))]

        if self.algorithm == "traditional":
            self.n_heads = 1
            head_of = lambda k, i: 0
        elif self.algorithm == "user_centered":
            self.n_heads = N
            head_of = lambda k, i: i
        elif self.algorithm == "task_centered":
            self.n_heads = K
            head_of = lambda k, i: k
        else:
            self.n_heads = N * K
            head_of = lambda k, i: k * N + i
        self.has_global = per_task and cfg.global_head
        self.slot_heads = [np.array([head_of(k, i) for k, i in slots]) for slots in self.actor_slots]
        self.slot_sizes = [[self.action_sizes[k][i] for k, i in slots] for slots in self.actor_slots]
        self.slot_offsets = [np.concatenate([[0], np.cumsum(s)]) for s in self.slot_sizes]

        self.actors = []
        for j, (inputs, sizes) in enumerate(zip(self.actor_inputs, self.slot_sizes)):
            in_dim = sum(self.state_dims[k] for k in inputs)
            self.actors.append(init_mlp([in_dim, *hidden, sum(sizes)], RngStream(seed, f"actor/{j}"),
                                        out_groups=sizes))
        n_out = self.n_heads + (1 if self.has_global else 0)
        self.critic = init_mlp([sum(self.state_dims), *hidden, n_out], RngStream(seed, "critic"),
                               out_groups=[1] * n_out)
        self.actor_opt = [AdamState.for_params(a, lr=cfg.lr) for a in self.actors]
        self.critic_opt = AdamState.for_params(self.critic, lr=cfg.lr)
        self._uniform_sizes = [len(set(s)) == 1 for s in self.slot_sizes]
        self._standardizer = RunningStandardizer(K)

    # -- structure ------------------------------------------------------------
    @property
    def reward_length(self) -> int:
        return self.n_heads + (1 if self.has_global else 0)

    @property
    def networks(self) -> list[MlpParams]:
        return [*self.actors, self.critic]

    def actor_input(self, j: int, task_states) -> np.ndarray:
        ins = self.actor_inputs[j]
        if len(ins) == 1:
            return np.asarray(task_states[ins[0]], dtype=np.float64)
        return np.concatenate([np.asarray(task_states[k], dtype=np.float64) for k in ins], axis=-1)

    def critic_input(self, task_states) -> np.ndarray:
        if len(task_states) == 1:
            return np.asarray(task_states[0], dtype=np.float64)
        return np.concatenate([np.asarray(s, dtype=np.float64) for s in task_states], axis=-1)

    def _check_states(self, task_states) -> None:
        if len(task_states) != self.n_tasks:
            raise ConfigError(f"expected {self.n_tasks} task states, got {len(task_states)}")
        for k, s in enumerate(task_states):
            if np.shape(s)[-1] != self.state_dims[k]:
                raise ShapeError(f"task {k} state has dim {np.shape(s)[-1]}, expected {self.state_dims[k]}")

    # -- acting -----------------------------------------------------------------
    def distributions(self, task_states) -> list[list[np.ndarray]]:
        """Per actor, per tail: action probabilities for one state."""
        self._check_states(task_states)
        out = []
        for j, actor in enumerate(self.actors):
            logits, _ = mlp_forward(actor, self.actor_input(j, task_states))
            off = self.slot_offsets[j]
            out.append([softmax(logits[off[s]:off[s + 1]]) for s in range(len(self.slot_sizes[j]))])
        return out

    def act(self, task_states, rng: RngStream | None = None, greedy: bool = False):
        """Sample (or argmax) one action per slot.

        Returns ``(actions, log_probs)`` as lists over actors. Each actor draws
        one uniform per tail in a single call, in tail order.
        """
        self._check_states(task_states)
        actions, logps = [], []
        for j, actor in enumerate(self.actors):
            logits, _ = mlp_forward(actor, self.actor_input(j, task_states))
            sizes = self.slot_sizes[j]
            if self._uniform_sizes[j]:
                z = logits.reshape(len(sizes), sizes[0])
                lp = log_softmax(z)
                if greedy:
                    a = np.argmax(z, axis=1)
                else:
                    u = rng.random(len(sizes))
                    cdf = np.cumsum(np.exp(lp), axis=1)
                    a = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
                    a = np.minimum(a, sizes[0] - 1)
                sel = lp[np.arange(len(sizes)), a]
            else:
                off = self.slot_offsets[j]
                u = None if greedy else rng.random(len(sizes))
                a = np.zeros(len(sizes), dtype=np.int64)
                sel = np.zeros(len(sizes))
                for s in range(len(sizes)):
                    lps = log_softmax(logits[off[s]:off[s + 1]])
                    if greedy:
                        a[s] = int(np.argmax(lps))
                    else:
                        cdf = np.cumsum(np.exp(lps))
                        a[s] = min(int((cdf <= u[s] * cdf[-1]).sum()), sizes[s] - 1)
                    sel[s] = lps[a[s]]
            actions.append(np.asarray(a, dtype=np.int64))
            logps.append(sel)
        return actions, logps

    def env_actions(self, actions) -> list[np.ndarray]:
        """Regroup per-actor slot actions into per-task entity actions."""
        out = [np.zeros(self.n_entities, dtype=np.int64) for _ in range(self.n_tasks)]
        for j, slots in enumerate(self.actor_slots):
            for s, (k, i) in enumerate(slots):
                out[k][i] = actions[j][s]
        return out

    # -- values -------------------------------------------------------------------
    def value(self, task_states) -> CriticOutputs:
        self._check_states(task_states)
        v, _ = mlp_forward(self.critic, self.critic_input(task_states))
        return CriticOutputs(v, self.n_heads, self.has_global)

    # -- rewards --------------------------------------------------------------------
    def reward_vector(self, entity_rewards, task_rewards) -> np.ndarray:
        """Map an environment step's rewards onto this agent's value heads.

        ``entity_rewards`` is (N, K); ``task_rewards`` is the environment's
        pooled reward per task (K,).
        """
        R = np.asarray(entity_rewards, dtype=np.float64)
        tr = np.asarray(task_rewards, dtype=np.float64)
        if R.shape != (self.n_entities, self.n_tasks) or tr.shape != (self.n_tasks,):
            raise ConfigError("reward shapes do not match the environment layout")
        if self.algorithm == "traditional":
            out = np.array([tr.sum()])
        elif self.algorithm == "user_centered":
            out = R.sum(axis=1)
        elif self.algorithm == "task_centered":
            out = tr.copy()
        else:
            out = R.T.reshape(-1)
        if self.has_global:
            rg = global_reward(tr, self.cfg.global_reward, self._standardizer)
            out = np.append(out, rg)
        return out

    # -- learning ---------------------------------------------------------------------
    def prepare(self, rollout: Rollout | dict) -> dict:
        """Advantages and value targets for a rollout, computed once per update."""
        b = rollout.batch() if isinstance(rollout, Rollout) else rollout
        if b["rewards"].shape[1] != self.reward_length:
            raise ConfigError(f"{self.algorithm} expects reward vectors of length {self.reward_length}, "
                              f"got {b['rewards'].shape[1]}")
        values, _ = mlp_forward(self.critic, self.critic_input(b["states"]))
        terminals = b["terminals"]
        last = None
        if not terminals[-1]:
            last, _ = mlp_forward(self.critic, self.critic_input(b["last_next_states"]))
        adv, targets = compute_advantages(values, b["rewards"], self.cfg.gamma, self.cfg.gae_lambda,
                                          terminals, last)
        if self.cfg.normalize_advantages and adv.shape[0] > 1:
            adv = (adv - adv.mean(axis=0)) / (adv.std(axis=0) + 1e-8)
        slot_adv = []
        for j in range(len(self.actors)):
            a = adv[:, self.slot_heads[j]]
            if self.has_global:
                a = a + self.cfg.global_mix * adv[:, -1:]
            slot_adv.append(a)
        return dict(b, advantages=adv, targets=targets, slot_advantages=slot_adv)

    def loss_and_grads(self, batch: dict, actors=None, critic=None):
        """Total loss and gradients for every network, advantages held fixed.

        Returns ``(loss, [actor grads..., critic grads], UpdateStats)``.
        """
        actors = self.actors if actors is None else actors
        critic = self.critic if critic is None else critic
        cfg = self.cfg
        T = batch["rewards"].shape[0]
        head_actor = np.zeros(self.n_heads)
        entropy_total = 0.0
        total = 0.0
        grads = []
        for j, actor in enumerate(actors):
            x = self.actor_input(j, batch["states"])
            logits, cache = mlp_forward(actor, x)
            g_logits = np.zeros_like(logits)
            off = self.slot_offsets[j]
            acts = batch["actions"][j]
            adv = batch["slot_advantages"][j]
            old = batch["log_probs"][j]
            rows = np.arange(T)
            for s in range(len(self.slot_sizes[j])):
                z = logits[:, off[s]:off[s + 1]]
                lp = log_softmax(z)
                p = np.exp(lp)
                a = acts[:, s]
                sel = lp[rows, a]
                A = adv[:, s]
                if cfg.clip:
                    ratio = np.exp(sel - old[:, s])
                    surr = clipped_surrogate(ratio, A, cfg.clip_eps)
                    pg_loss = -np.mean(surr)
                    active = (ratio * A) <= (np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * A)
                    d_sel = -(active * A * ratio) / T
                else:
                    pg_loss = -np.mean(sel * A)
                    d_sel = -A / T
                H = _head_entropy(lp, p)
                ent = float(np.mean(H))
                total += pg_loss - cfg.entropy_coef * ent
                head_actor[self.slot_heads[j][s]] += pg_loss - cfg.entropy_coef * ent
                entropy_total += ent
                # d(-c_H * mean H)/dz = c_H * p * (log p + H) / T
                gz = -p * d_sel[:, None]
                gz[rows, a] += d_sel
                gz += cfg.entropy_coef * p * (lp + H[:, None]) / T
                g_logits[:, off[s]:off[s + 1]] = gz
            grads.append(mlp_backward(actor, cache, g_logits))
        v, cache = mlp_forward(critic, self.critic_input(batch["states"]))
        err = batch["targets"] - v
        head_sq = np.mean(err * err, axis=0)
        critic_loss = cfg.value_coef * float(np.sum(head_sq))
        total += critic_loss
        grads.append(mlp_backward(critic, cache, -2.0 * cfg.value_coef * err / T))
        stats = UpdateStats(
            actor_losses=head_actor,
            critic_losses=cfg.value_coef * head_sq[: self.n_heads],
            advantages=batch["advantages"][:, : self.n_heads].mean(axis=0),
            entropy=entropy_total,
            global_loss=cfg.value_coef * float(head_sq[-1]) if self.has_global else None,
        )
        if not math.isfinite(total):
            raise TrainingDivergence("non-finite training loss")
        return total, grads, stats

    def update(self, rollout: Rollout | dict) -> UpdateStats:
        """One optimizer step per network per epoch (advantages fixed per update)."""
        batch = self.prepare(rollout)
        stats = None
        for _ in range(self.cfg.epochs):
            _, grads, stats = self.loss_and_grads(batch)
            for net, g, opt in zip(self.networks, grads, [*self.actor_opt, self.critic_opt]):
                clip_grad_norm(g, self.cfg.max_grad_norm)
                adam_step(net, g, opt)
        return stats

    # -- persistence -------------------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, net in [*((f"actor{j}", a) for j, a in enumerate(self.actors)), ("critic", self.critic)]:
            for l, (w, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{name}.W{l}"] = w
                out[f"{name}.b{l}"] = b
        return out

    def load_parameters(self, arrays) -> None:
        for name, net in [*((f"actor{j}", a) for j, a in enumerate(self.actors)), ("critic", self.critic)]:
            for l in range(net.n_layers):
                for key, target in ((f"{name}.W{l}", net.weights[l]), (f"{name}.b{l}", net.biases[l])):
                    if key not in arrays or arrays[key].shape != target.shape:
                        raise ConfigError(f"parameter file does not match this agent ({key})")
                    target[...] = arrays[key]


class RandomAgent:
    """Uniform random actions over every slot; never learns."""

    algorithm = "random"

    def __init__(self, action_sizes):
        self.action_sizes = [[int(a) for a in row] for row in action_sizes]

    def act(self, task_states=None, rng: RngStream | None = None, greedy: bool = False):
        return [act_random(row, rng) for row in self.action_sizes], None

    def env_actions(self, actions):
        return actions

    def parameters(self) -> dict:
        return {}


def act_random(action_space_sizes, rng: RngStream) -> np.ndarray:
    """One uniform draw per slot: floor(u * size)."""
    sizes = np.asarray(action_space_sizes, dtype=np.int64)
    if np.any(sizes < 1):
        raise ValueError("action space sizes must be >= 1")
    u = rng.random(len(sizes))
    return np.minimum((u * sizes).astype(np.int64), sizes - 1)


def make_agent(cfg: AgentConfig, state_dims, action_sizes, seed: int = 0):
    cfg.validate()
    if cfg.algorithm == "random":
        return RandomAgent(action_sizes)
    return ActorCritic(cfg, state_dims, action_sizes, seed)
