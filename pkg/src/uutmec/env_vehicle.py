"""Vehicular digital-twinning uplink with two MEC tasks.

Task 0 assigns every vehicle to an edge server; task 1 picks every vehicle's
uplink transmission level. Higher levels send more bits and buy higher
detection accuracy (an mAP proxy). Each server has its own orthogonal band,
split equally among the vehicles assigned to it, and its own CPU, split
equally among the same vehicles.

Actions are 0-based: server s in 0..E-1, level index l in 0..L-1 (level l+1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import RunningStandardizer, global_reward
from .envcore import get_preset, member_rates, server_compute, shannon_rate, tx_delays
from .errors import ConfigError
from .numerics import RngStream


@dataclass
class LevelTable:
    """Scene size and accuracy per transmission level, both strictly increasing."""

    bits: np.ndarray
    accuracy: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.float64)
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        if self.bits.ndim != 1 or self.bits.shape != self.accuracy.shape or self.bits.size < 1:
            raise ConfigError("level table needs matching non-empty bits and accuracy lists")
        if np.any(np.diff(self.bits) <= 0) or np.any(self.bits <= 0):
            raise ConfigError("level bits must be positive and strictly increasing")
        if np.any(np.diff(self.accuracy) <= 0) or self.accuracy[0] <= 0 or self.accuracy[-1] > 1:
            raise ConfigError("level accuracy must be strictly increasing within (0, 1]")

    @classmethod
    def saturating(cls, levels: int, s_base: float, a_max: float = 0.95, b: float = 0.6,
                   c: float = 0.9) -> "LevelTable":
        """S_l = l * s_base and a_l = a_max - b * exp(-c * l) for l = 1..levels."""
        l = np.arange(1, levels + 1, dtype=np.float64)
        return cls(l * s_base, a_max - b * np.exp(-c * l))

    @property
    def levels(self) -> int:
        return self.bits.size


@dataclass
class VehicleConfig:
    m_vehicles: int = 4
    e_servers: int = 2
    levels: int = 4
    preset: str = "desk-scale"
    episode_length: int = 64
    bandwidth: float = 1.0e7
    noise_density: float = 1.0e-20
    tx_power: float = 0.2
    near_gain: float = 1.0e-10
    far_gain: float = 3.0e-14
    server_cycles: float = 1.0e11
    detect_workload: float = 5.0e7
    max_delay: float = 2.0
    s_base: float = 2.0e5
    accuracy_max: float = 0.95
    accuracy_b: float = 0.6
    accuracy_c: float = 0.9
    level_bits: list | None = None
    level_accuracy: list | None = None
    fading: str = "rayleigh_block"
    global_reward: str = "standardized_mean"

    def validate(self) -> None:
        if min(self.m_vehicles, self.e_servers, self.levels) < 1:
            raise ConfigError("env.vehicle needs m_vehicles, e_servers, levels >= 1")
        if self.episode_length < 1:
            raise ConfigError("env.vehicle.episode_length must be >= 1")
        if self.fading not in ("static", "rayleigh_block"):
            raise ConfigError("env.vehicle.fading must be 'static' or 'rayleigh_block'")
        for name in ("bandwidth", "noise_density", "tx_power", "near_gain", "far_gain",
                     "server_cycles", "detect_workload", "s_base", "max_delay"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"env.vehicle.{name} must be positive")
        if (self.level_bits is None) != (self.level_accuracy is None):
            raise ConfigError("env.vehicle.level_bits and level_accuracy must be overridden together")
        if self.level_bits is not None and len(self.level_bits) != self.levels:
            raise ConfigError("env.vehicle.level_bits length must equal levels")
        get_preset(self.preset)

    def level_table(self) -> LevelTable:
        if self.level_bits is not None:
            return LevelTable(self.level_bits, self.level_accuracy)
        scale = get_preset(self.preset).scene_scale
        return LevelTable.saturating(self.levels, self.s_base * scale, self.accuracy_max,
                                     self.accuracy_b, self.accuracy_c)


@dataclass
class VehicleState:
    allocation: np.ndarray
    level: np.ndarray
    gains: np.ndarray
    step: int


class VehicleEnv:
    """Two-task vehicular uplink environment.

    Vehicle j is near server ``j * E // M`` and far from the others; the
    near/far class sets its mean gain to each server.
    """

    kind = "vehicle"
    reward_pooling = "mean"

    def __init__(self, config: VehicleConfig | None = None):
        self.config = config or VehicleConfig()
        self.config.validate()
        cfg = self.config
        self.preset = get_preset(cfg.preset)
        self.table = self.config.level_table()
        M, E = cfg.m_vehicles, cfg.e_servers
        self.home = np.array([j * E // M for j in range(M)])
        self.mean_gains = np.full((M, E), cfg.far_gain)
        self.mean_gains[np.arange(M), self.home] = cfg.near_gain
        self.workload = cfg.detect_workload * self.preset.scene_scale
        worst = min(shannon_rate(cfg.bandwidth, cfg.tx_power, g, cfg.noise_density)
                    for g in np.unique(self.mean_gains))
        self.delay_norm = min(self.table.bits[-1] / worst + server_compute(self.workload, cfg.server_cycles, 1),
                              cfg.max_delay)
        self._rng: RngStream | None = None
        self._standardizer = RunningStandardizer(2)
        self.state: VehicleState | None = None

    # -- structure ----------------------------------------------------------------
    @property
    def n_entities(self) -> int:
        return self.config.m_vehicles

    @property
    def n_tasks(self) -> int:
        return 2

    @property
    def action_sizes(self) -> list[list[int]]:
        M = self.config.m_vehicles
        return [[self.config.e_servers] * M, [self.table.levels] * M]

    @property
    def state_dims(self) -> list[int]:
        M, E = self.config.m_vehicles, self.config.e_servers
        return [M * E + E, M * E + M]

    @property
    def episode_length(self) -> int:
        return self.config.episode_length

    def task_states(self, state: VehicleState) -> list[np.ndarray]:
        return [state.allocation, state.level]

    # -- dynamics -------------------------------------------------------------------
    def _draw_gains(self) -> np.ndarray:
        if self.config.fading == "static":
            return self.mean_gains.copy()
        return self._rng.exponential(1.0, size=self.mean_gains.shape) * self.mean_gains

    def _observe(self, gains, loads, delays, step) -> VehicleState:
        g = (gains / self.config.near_gain).reshape(-1)
        alloc = np.concatenate([g, loads / self.config.m_vehicles])
        level = np.concatenate([g, delays / self.delay_norm])
        return VehicleState(alloc, level, gains, step)

    def reset(self, seed: int) -> VehicleState:
        self._rng = RngStream(seed, "env/vehicle/gains")
        self._standardizer = RunningStandardizer(2)
        gains = self._draw_gains()
        self.state = self._observe(gains, np.zeros(self.config.e_servers),
                                   np.zeros(self.config.m_vehicles), 0)
        return self.state

    def delays(self, gains: np.ndarray, servers, levels) -> np.ndarray:
        """Per-vehicle uplink + detection delay in seconds, capped at ``max_delay``."""
        cfg = self.config
        servers = np.asarray(servers, dtype=np.int64)
        levels = np.asarray(levels, dtype=np.int64)
        M = cfg.m_vehicles
        if (servers.shape != (M,) or levels.shape != (M,) or np.any(servers < 0)
                or np.any(servers >= cfg.e_servers) or np.any(levels < 0)
                or np.any(levels >= self.table.levels)):
            raise ValueError(f"invalid vehicle action servers={servers.tolist()} levels={levels.tolist()}")
        members = np.bincount(servers, minlength=cfg.e_servers)[servers]
        rates = member_rates(cfg.bandwidth, cfg.noise_density, np.full(M, cfg.tx_power),
                             gains[np.arange(M), servers], members)
        d = tx_delays(self.table.bits[levels], rates) + self.workload * members / cfg.server_cycles
        return np.minimum(d, cfg.max_delay)

    def step(self, actions) -> tuple[VehicleState, np.ndarray, dict]:
        """``actions = (servers, levels)``; returns rewards [r_delay, r_acc, r_g]."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        servers, levels = (np.asarray(a, dtype=np.int64) for a in actions)
        d = self.delays(self.state.gains, servers, levels)
        acc = self.table.accuracy[levels]
        entity = np.stack([-d / self.delay_norm, acc], axis=1)
        task = entity.mean(axis=0)
        rg = global_reward(task, self.config.global_reward, self._standardizer)
        loads = np.bincount(servers, minlength=self.config.e_servers).astype(np.float64)
        gains = self._draw_gains()
        self.state = self._observe(gains, loads, d, self.state.step + 1)
        info = {
            "delay_ms": d * 1000.0,
            "accuracy": acc,
            "mean_delay_ms": float(d.mean() * 1000.0),
            "mean_accuracy": float(acc.mean()),
            "entity_rewards": entity,
            "task_rewards": task,
            "terminal": self.state.step >= self.config.episode_length,
        }
        return self.state, np.array([task[0], task[1], rg]), info


def vehicle_metrics(infos) -> tuple[float, float]:
    """(mean delay ms, mean accuracy) over every step and vehicle."""
    infos = list(infos)
    if not infos:
        raise ValueError("empty episode")
    delays = np.concatenate([np.atleast_1d(i["delay_ms"]) for i in infos])
    acc = np.concatenate([np.atleast_1d(i["accuracy"]) for i in infos])
    return float(delays.mean()), float(acc.mean())
