"""Experiment orchestration: configs, training loop, evaluation, comparisons."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import ActorCritic, AgentConfig, Rollout, Transition, make_agent
from .env_vehicle import VehicleConfig, VehicleEnv, vehicle_metrics
from .env_vr import VrConfig, VrEnv, VrUserProfile, success_rate
from .errors import ConfigError, TrainingDivergence
from .numerics import RngStream, finite_diff_check, stream_key

log = logging.getLogger(__name__)

CSV_HEADER = ["run_id", "algorithm", "env", "seed", "episode", "metric", "value"]
ENV_METRICS = {"vr": ["success_rate"], "vehicle": ["mean_delay_ms", "mean_accuracy"]}


@dataclass
class TrainingConfig:
    episodes: int = 2000
    rollout_length: int | None = 16
    eval_every: int = 20
    eval_episodes: int = 4

    def validate(self) -> None:
        if self.episodes < 0:
            raise ConfigError("training.episodes must be >= 0")
        if self.rollout_length is not None and self.rollout_length < 1:
            raise ConfigError("training.rollout_length must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("training.eval_every and training.eval_episodes must be >= 1")


@dataclass
class ExperimentConfig:
    env_kind: str
    env: VrConfig | VehicleConfig
    agent: AgentConfig = field(default_factory=AgentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    run_id: str = ""
    output_dir: str = "runs"

    def validate(self) -> None:
        if self.env_kind not in ENV_METRICS:
            raise ConfigError("env must contain exactly one of 'vr' or 'vehicle'")
        self.env.validate()
        self.agent.validate()
        self.training.validate()
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def name(self) -> str:
        return self.run_id or f"{self.env_kind}-{self.agent.algorithm}-s{self.seed}"

    def to_dict(self) -> dict:
        env = dataclasses.asdict(self.env)
        if isinstance(self.env, VrConfig) and not isinstance(self.env.roster, str):
            env["roster"] = [p if isinstance(p, dict) else dataclasses.asdict(p) for p in self.env.roster]
        return {
            "env": {self.env_kind: env},
            "agent": dataclasses.asdict(self.agent),
            "training": dataclasses.asdict(self.training),
            "seed": self.seed,
            "run_id": self.run_id,
            "output_dir": self.output_dir,
        }


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown field {path}.{key}")
    missing = [f.name for f in dataclasses.fields(cls) if f.name not in data
               and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(f"{path} is missing {', '.join(missing)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed JSON config and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"env", "agent", "training", "seed", "run_id", "output_dir"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown field {key}")
    env_block = data.get("env")
    if not isinstance(env_block, dict) or len(env_block) != 1:
        raise ConfigError("env must contain exactly one of 'vr' or 'vehicle'")
    (kind, params), = env_block.items()
    if kind == "vr":
        env = _build(VrConfig, params, "env.vr")
        if not isinstance(env.roster, str):
            env.roster = [_build(VrUserProfile, p, f"env.vr.roster[{i}]") if isinstance(p, dict) else p
                          for i, p in enumerate(env.roster)]
    elif kind == "vehicle":
        env = _build(VehicleConfig, params, "env.vehicle")
    else:
        raise ConfigError(f"unknown field env.{kind}")
    try:
        cfg = ExperimentConfig(
            env_kind=kind,
            env=env,
            agent=_build(AgentConfig, data.get("agent", {}), "agent"),
            training=_build(TrainingConfig, data.get("training", {}), "training"),
            seed=int(data.get("seed", 0)),
            run_id=str(data.get("run_id", "")),
            output_dir=str(data.get("output_dir", "runs")),
        )
        cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def make_env(kind: str, env_cfg):
    if kind == "vr":
        return VrEnv(env_cfg)
    if kind == "vehicle":
        return VehicleEnv(env_cfg)
    raise ConfigError(f"unknown environment {kind!r}")


def episode_seed(seed: int, split: str, index: int) -> int:
    """Environment seed for episode ``index`` of ``split``; shared by all algorithms."""
    return stream_key(seed, f"env/{split}/{index}") & (2**64 - 1)


def build_agent(cfg: ExperimentConfig, env):
    return make_agent(cfg.agent, env.state_dims, env.action_sizes, seed=cfg.seed)


def _env_actions(agent, actions, kind):
    per_task = agent.env_actions(actions)
    return per_task[0] if kind == "vr" else per_task


def run_episode(env, agent, seed: int, rng: RngStream | None, greedy: bool) -> dict:
    """Play one episode without learning; returns the episode's metrics."""
    state = env.reset(seed)
    rewards, infos = [], []
    for _ in range(env.episode_length):
        actions, _ = agent.act(env.task_states(state), rng, greedy=greedy)
        state, r, info = env.step(_env_actions(agent, actions, env.kind))
        rewards.append(r)
        infos.append(info)
    return _episode_metrics(env.kind, rewards, infos)


def _episode_metrics(kind, rewards, infos) -> dict:
    if kind == "vr":
        return {"success_rate": success_rate(np.stack(rewards))}
    delay, acc = vehicle_metrics(infos)
    return {"mean_delay_ms": delay, "mean_accuracy": acc}


def evaluate(agent, kind: str, env_cfg, episodes: int, seed: int) -> dict:
    """Greedy evaluation (uniform actions for the random agent).

    Returns ``{metric: (mean, std)}``; does not touch agent parameters.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = make_env(kind, env_cfg)
    if isinstance(agent, ActorCritic):
        if agent.state_dims != env.state_dims or agent.action_sizes != env.action_sizes:
            raise ConfigError("agent parameters do not fit this environment's state/action spaces")
        rng, greedy = None, True
    else:
        if agent.action_sizes != env.action_sizes:
            raise ConfigError("random agent action spaces do not fit this environment")
        rng, greedy = RngStream(seed, "agent/eval"), False
    per_ep = [run_episode(env, agent, episode_seed(seed, "eval", e), rng, greedy) for e in range(episodes)]
    return {m: (float(np.mean([p[m] for p in per_ep])), float(np.std([p[m] for p in per_ep])))
            for m in per_ep[0]}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(cfg: ExperimentConfig, persist: bool = False):
    """Collect rollouts and update once per rollout; evaluate every ``eval_every`` episodes.

    Returns ``(agent, metric rows)``. With ``persist`` the metrics CSV,
    parameters and config are written under ``output_dir/<run name>/``, also
    when training diverges (the divergence is re-raised afterwards).
    """
    cfg.validate()
    env = make_env(cfg.env_kind, cfg.env)
    agent = build_agent(cfg, env)
    tr = cfg.training
    rollout_len = tr.rollout_length or env.episode_length
    act_rng = RngStream(cfg.seed, "agent/act")
    eval_rng = RngStream(cfg.seed, "agent/eval")
    learns = isinstance(agent, ActorCritic)
    rows: list[tuple] = []
    name = cfg.name
    algo = cfg.agent.algorithm

    def emit(episode, metric, value):
        rows.append((name, algo, cfg.env_kind, cfg.seed, episode, metric, float(value)))

    eval_env = make_env(cfg.env_kind, cfg.env)

    def _evaluate_into(episode):
        # the random agent keeps one uniform stream across evaluations
        scores = [run_episode(eval_env, agent, episode_seed(cfg.seed, "eval", e),
                              None if learns else eval_rng, greedy=learns)
                  for e in range(tr.eval_episodes)]
        for metric in ENV_METRICS[cfg.env_kind]:
            emit(episode, metric, np.mean([s[metric] for s in scores]))
    rollout = Rollout()
    stats = None
    head_rewards = None
    try:
        for ep in range(tr.episodes):
            if not learns:
                if (ep + 1) % tr.eval_every == 0:
                    _evaluate_into(ep + 1)
                continue
            state = env.reset(episode_seed(cfg.seed, "train", ep))
            ep_rewards = []
            for _ in range(env.episode_length):
                ts = env.task_states(state)
                actions, logps = agent.act(ts, act_rng)
                next_state, _, info = env.step(_env_actions(agent, actions, cfg.env_kind))
                if learns:
                    rvec = agent.reward_vector(info["entity_rewards"], info["task_rewards"])
                    ep_rewards.append(rvec)
                    rollout.append(Transition(ts, actions, logps, rvec, env.task_states(next_state),
                                              bool(info["terminal"])))
                    if len(rollout) >= rollout_len or info["terminal"]:
                        stats = agent.update(rollout)
                        rollout = Rollout()
                state = next_state
            head_rewards = np.sum(ep_rewards, axis=0)
            if (ep + 1) % tr.eval_every == 0:
                _evaluate_into(ep + 1)
                if stats is not None:
                    emit(ep + 1, "actor_loss", stats.actor_loss)
                    emit(ep + 1, "critic_loss", stats.critic_loss)
                    emit(ep + 1, "entropy", stats.entropy)
                    for h, v in enumerate(head_rewards):
                        emit(ep + 1, f"reward_head_{h}", v)
    except TrainingDivergence:
        if persist:
            save_run(cfg, agent, rows)
        raise
    if persist:
        save_run(cfg, agent, rows)
    return agent, rows


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / cfg.name


def save_run(cfg: ExperimentConfig, agent, rows) -> Path:
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(rows, out / "metrics.csv")
    (out / "config.json").write_text(dump_config(cfg) + "\n", encoding="utf-8")
    np.savez(out / "params.npz", **agent.parameters())
    return out


def load_agent(cfg: ExperimentConfig, params_path):
    env = make_env(cfg.env_kind, cfg.env)
    agent = build_agent(cfg, env)
    if isinstance(agent, ActorCritic):
        with np.load(params_path) as data:
            agent.load_parameters({k: data[k] for k in data.files})
    return agent


# ---------------------------------------------------------------------------
# Metrics I/O
# ---------------------------------------------------------------------------

def write_metrics(rows, path) -> None:
    """CSV with header ``run_id,algorithm,env,seed,episode,metric,value``.

    Floats are written with ``repr`` so they parse back bit-exactly.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for run_id, algo, env, seed, episode, metric, value in rows:
            w.writerow([run_id, algo, env, int(seed), int(episode), metric, repr(float(value))])


def read_metrics(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [(a, b, c, int(d), int(e), f, float(g)) for a, b, c, d, e, f, g in r]


def final_window(rows, metric: str, episodes: int, fraction: float = 0.1) -> float:
    """Mean of ``metric`` over rows whose episode lies in the last ``fraction`` of training."""
    start = episodes - fraction * episodes
    vals = [r[6] for r in rows if r[5] == metric and r[4] > start]
    if not vals:
        raise ValueError(f"no {metric} rows in the final window")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def compare(configs, seeds, out_dir=None) -> dict:
    """Run every config at every seed on a shared environment.

    Returns ``{"rows": [...], "summary": {algorithm: {seed: {metric: value}}}}``.
    When ``out_dir`` is given, writes ``comparison.csv``: the learning-curve
    rows followed by one ``final_<metric>`` row per (run, metric) holding the
    mean over the last 10% of episodes.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("nothing to compare")
    ref = json.dumps(configs[0].to_dict()["env"], sort_keys=True)
    for c in configs[1:]:
        if json.dumps(c.to_dict()["env"], sort_keys=True) != ref:
            raise ValueError("all compared configs must share the same env block")
    rows, final_rows = [], []
    summary: dict = {}
    for c in configs:
        for seed in seeds:
            run_cfg = dataclasses.replace(c, seed=int(seed),
                                          run_id=f"{c.env_kind}-{c.agent.algorithm}-s{seed}")
            log.info("running %s", run_cfg.run_id)
            _, run_rows = train(run_cfg)
            rows += run_rows
            per_metric = {}
            for metric in ENV_METRICS[c.env_kind]:
                value = final_window(run_rows, metric, run_cfg.training.episodes)
                per_metric[metric] = value
                final_rows.append((run_cfg.run_id, c.agent.algorithm, c.env_kind, int(seed),
                                   run_cfg.training.episodes, f"final_{metric}", value))
            summary.setdefault(c.agent.algorithm, {})[int(seed)] = per_metric
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_metrics(rows + final_rows, Path(out_dir) / "comparison.csv")
    return {"rows": rows, "final_rows": final_rows, "summary": summary}


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

GRADCHECK_ALGORITHMS = ("traditional", "user_centered", "task_centered", "uut")


def synthetic_batch(agent: ActorCritic, rng: RngStream, steps: int = 6) -> dict:
    """A small random rollout (terminal in the middle) fitted to ``agent``."""
    rollout = Rollout()
    for t in range(steps):
        ts = [rng.normal(size=d) for d in agent.state_dims]
        actions, logps = agent.act(ts, rng)
        old = [lp + rng.uniform(-0.3, 0.3, size=lp.shape) for lp in logps]
        rollout.append(Transition(ts, actions, old, rng.normal(size=agent.reward_length),
                                  [rng.normal(size=d) for d in agent.state_dims],
                                  terminal=(t == steps // 2)))
    return agent.prepare(rollout)


def gradcheck_all(draws: int = 3, h: float = 1e-5, seed: int = 0) -> dict:
    """Finite-difference check of every architecture's total loss.

    Uses small networks on a 2-entity, 2-task synthetic layout, plain and
    clipped-surrogate losses, at ``draws`` random parameter draws each.
    Returns ``{name: max relative error}`` plus ``"max"``.
    """
    state_dims = [5, 4]
    action_sizes = [[3, 3], [2, 4]]
    report = {}
    for algo in GRADCHECK_ALGORITHMS:
        for clip in (False, True):
            worst = 0.0
            for d in range(draws):
                cfg = AgentConfig(algorithm=algo, hidden_sizes=[6, 5], clip=clip, entropy_coef=0.05)
                agent = ActorCritic(cfg, state_dims, action_sizes, seed=seed + d)
                rng = RngStream(seed + d, f"gradcheck/{algo}/{clip}")
                for net in agent.networks:
                    for a in net.arrays():
                        a[...] = rng.normal(0.0, 0.6, size=a.shape)
                batch = synthetic_batch(agent, rng)

                def loss_and_grad(nets, agent=agent, batch=batch):
                    loss, grads, _ = agent.loss_and_grads(batch, actors=nets[:-1], critic=nets[-1])
                    return loss, grads

                worst = max(worst, finite_diff_check(loss_and_grad, agent.networks, h))
            report[f"{algo}{'+clip' if clip else ''}"] = worst
    report["random"] = 0.0
    report["max"] = max(report.values())
    return report
