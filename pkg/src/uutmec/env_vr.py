"""VR scene offloading: per-frame channel access allocation for N users.

Each step is one frame slot. A centralized controller picks, for every user,
either local rendering (action 0) or offloading over uplink channel k
(action k in 1..C). A user's frame succeeds when it is delivered within
``min(1000/fps, delay_tolerance)`` ms and within its energy budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .envcore import ChannelModel, get_preset, member_rates, tx_delays
from .errors import ConfigError
from .numerics import RngStream


@dataclass(frozen=True)
class VrUserProfile:
    fps: float
    delay_tolerance_ms: float
    energy_budget: float
    capability: float
    mean_gain: float
    tx_power: float
    scene_bits: float
    workload: float

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"VR user profile field {k} must be positive, got {v!r}")

    @property
    def deadline_ms(self) -> float:
        return min(1000.0 / self.fps, self.delay_tolerance_ms)


# Heterogeneous default roster. Links run at moderate SNR, so sharing a channel
# costs each member only part of its rate and users interfere mildly. Local
# rendering succeeds only on light frames (workload jitter, unobserved), and
# offloading succeeds when the user's current gain is good enough, so the best
# choice for each user depends on its own gain.
#   u0: 30 FPS, loose deadline, weak device, large scenes.
#   u1: 60 FPS, mid-range device.
#   u2: 90 FPS, strong device, short deadline.
#   u3: 120 FPS, strong device that often exceeds its energy budget locally.
DEFAULT_ROSTER = (
    VrUserProfile(fps=30, delay_tolerance_ms=100, energy_budget=0.25, capability=1.5e9,
                  mean_gain=5.0e-13, tx_power=0.2, scene_bits=1.36e5, workload=5.0e7),
    VrUserProfile(fps=60, delay_tolerance_ms=50, energy_budget=0.60, capability=2.7e9,
                  mean_gain=5.0e-13, tx_power=0.2, scene_bits=6.5e4, workload=5.0e7),
    VrUserProfile(fps=90, delay_tolerance_ms=25, energy_budget=2.00, capability=4.95e9,
                  mean_gain=5.0e-13, tx_power=0.2, scene_bits=4.0e4, workload=5.0e7),
    VrUserProfile(fps=120, delay_tolerance_ms=20, energy_budget=1.40, capability=6.0e9,
                  mean_gain=5.0e-13, tx_power=0.2, scene_bits=2.8e4, workload=5.0e7),
)

# Feature scales for the observation vector.
FPS_SCALE = 120.0
DELAY_SCALE_MS = 100.0
ENERGY_SCALE = 1.0
CAPABILITY_SCALE = 1e10


@dataclass
class VrConfig:
    n_users: int = 4
    channels: int = 2
    roster: str | list = "default"
    preset: str = "desk-scale"
    episode_length: int = 64
    bandwidth: float = 1.0e7
    noise_density: float = 1.0e-20
    server_cycles: float = 1.0e11
    kappa: float = 1e-27
    fading: str = "rayleigh_block"
    reward: str = "binary"
    workload_jitter: float = 0.5
    fps_choices: list = field(default_factory=lambda: [30, 60, 90, 120])
    delay_range_ms: list = field(default_factory=lambda: [20.0, 100.0])
    energy_range: list = field(default_factory=lambda: [0.2, 3.0])
    capability_range: list = field(default_factory=lambda: [1e9, 1e10])
    gain_range: list = field(default_factory=lambda: [2.5e-13, 1e-12])
    sampled_scene_bits: float = 6.0e4

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("env.vr.n_users must be >= 1")
        if self.channels < 1:
            raise ConfigError("env.vr.channels must be >= 1")
        if self.episode_length < 1:
            raise ConfigError("env.vr.episode_length must be >= 1")
        if not 0.0 <= self.workload_jitter < 1.0:
            raise ConfigError("env.vr.workload_jitter must lie in [0, 1)")
        if self.reward not in ("binary", "signed"):
            raise ConfigError("env.vr.reward must be 'binary' or 'signed'")
        if self.fading not in ("static", "rayleigh_block"):
            raise ConfigError("env.vr.fading must be 'static' or 'rayleigh_block'")
        if not (self.bandwidth > 0 and self.noise_density > 0 and self.server_cycles > 0 and self.kappa > 0):
            raise ConfigError("env.vr physical constants must be positive")
        get_preset(self.preset)
        if isinstance(self.roster, str):
            if self.roster not in ("default", "sampled"):
                raise ConfigError("env.vr.roster must be 'default', 'sampled' or a list of profiles")
        elif len(self.roster) != self.n_users:
            raise ConfigError(f"env.vr.roster has {len(self.roster)} entries but n_users={self.n_users}")


@dataclass
class VrState:
    """Observation plus the raw quantities it was built from."""

    vector: np.ndarray
    gains: np.ndarray
    success: np.ndarray
    step: int


class VrEnv:
    """Frame-slot VR offloading environment.

    The reward of user i is 1 when its frame succeeds and 0 otherwise
    (``reward="signed"`` gives +1/-1). Gains in the state are the ones the
    next step will be evaluated with.
    """

    kind = "vr"
    reward_pooling = "sum"

    def __init__(self, config: VrConfig | None = None):
        self.config = config or VrConfig()
        self.config.validate()
        self.preset = get_preset(self.config.preset)
        self.profiles: tuple[VrUserProfile, ...] = ()
        self._rng: RngStream | None = None
        self.state: VrState | None = None
        if not (isinstance(self.config.roster, str) and self.config.roster == "sampled"):
            self._set_profiles(self._fixed_roster())

    # -- structure ----------------------------------------------------------
    @property
    def n_entities(self) -> int:
        return self.config.n_users

    @property
    def n_tasks(self) -> int:
        return 1

    @property
    def action_sizes(self) -> list[list[int]]:
        return [[self.config.channels + 1] * self.config.n_users]

    @property
    def state_dims(self) -> list[int]:
        return [6 * self.config.n_users]

    @property
    def episode_length(self) -> int:
        return self.config.episode_length

    def task_states(self, state: VrState) -> list[np.ndarray]:
        return [state.vector]

    # -- roster -------------------------------------------------------------
    def _fixed_roster(self) -> list[VrUserProfile]:
        cfg = self.config
        if isinstance(cfg.roster, str):
            base = [DEFAULT_ROSTER[i % len(DEFAULT_ROSTER)] for i in range(cfg.n_users)]
        else:
            base = [p if isinstance(p, VrUserProfile) else VrUserProfile(**p) for p in cfg.roster]
        s = self.preset.scene_scale
        return [replace(p, scene_bits=p.scene_bits * s, workload=p.workload * s) for p in base]

    def _sample_roster(self, rng: RngStream) -> list[VrUserProfile]:
        cfg = self.config
        out = []
        for _ in range(cfg.n_users):
            out.append(VrUserProfile(
                fps=float(rng.choice(cfg.fps_choices)),
                delay_tolerance_ms=float(rng.uniform(*cfg.delay_range_ms)),
                energy_budget=float(rng.uniform(*cfg.energy_range)),
                capability=float(rng.uniform(*cfg.capability_range)),
                mean_gain=float(rng.uniform(*cfg.gain_range)),
                tx_power=0.2,
                scene_bits=cfg.sampled_scene_bits * self.preset.scene_scale,
                workload=5.0e7 * self.preset.scene_scale,
            ))
        return out

    def _set_profiles(self, profiles) -> None:
        self.profiles = tuple(profiles)
        self._fps = np.array([p.fps for p in profiles])
        self._deadline_s = np.array([p.deadline_ms for p in profiles]) / 1000.0
        self._budget = np.array([p.energy_budget for p in profiles])
        self._cap = np.array([p.capability for p in profiles])
        self._ref_gain = np.array([p.mean_gain for p in profiles])
        self._power = np.array([p.tx_power for p in profiles])
        self._scene = np.array([p.scene_bits for p in profiles])
        self._workload = np.array([p.workload for p in profiles])
        self._channel = ChannelModel(self.config.bandwidth, self.config.noise_density,
                                     self.config.channels, self._ref_gain, self.config.fading)
        self._static = np.empty(6 * len(profiles))
        self._static[0::6] = self._fps / FPS_SCALE
        self._static[1::6] = np.array([p.delay_tolerance_ms for p in profiles]) / DELAY_SCALE_MS
        self._static[2::6] = self._budget / ENERGY_SCALE
        self._static[3::6] = self._cap / CAPABILITY_SCALE

    # -- dynamics -----------------------------------------------------------
    def _observe(self, gains: np.ndarray, success: np.ndarray, step: int) -> VrState:
        v = self._static.copy()
        v[4::6] = gains / self._ref_gain.mean()
        v[5::6] = success
        return VrState(v, gains, success, step)

    def reset(self, seed: int) -> VrState:
        self._rng = RngStream(seed, "env/vr/gains")
        self._jitter_rng = RngStream(seed, "env/vr/workload")
        if isinstance(self.config.roster, str) and self.config.roster == "sampled":
            self._set_profiles(self._sample_roster(RngStream(seed, "env/vr/roster")))
        gains = self._channel.draw_gains(self._rng)
        self.state = self._observe(gains, np.zeros(self.config.n_users), 0)
        return self.state

    def outcomes(self, gains: np.ndarray, action, jitter=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-user (delay s, energy J) for one slot under ``action``.

        ``jitter`` scales each user's workload for this frame (default 1).
        """
        cfg = self.config
        jitter = np.ones(cfg.n_users) if jitter is None else np.asarray(jitter, dtype=np.float64)
        action = np.asarray(action, dtype=np.int64)
        if action.shape != (cfg.n_users,) or np.any(action < 0) or np.any(action > cfg.channels):
            raise ValueError(f"invalid VR action {action.tolist()}")
        off = action > 0
        m_off = max(int(np.count_nonzero(off)), 1)
        members = np.where(off, np.bincount(action, minlength=cfg.channels + 1)[action], 0)
        rates = member_rates(cfg.bandwidth, cfg.noise_density, self._power, gains, members)
        up = tx_delays(self._scene, rates)
        work = self._workload * jitter
        down = self.preset.downlink_bits / self.preset.qos.render_rate_bps
        delay = np.where(off, up + work * m_off / cfg.server_cycles + down, work / self._cap)
        energy = np.where(off, self._power * up, cfg.kappa * self._cap**2 * work)
        return delay, energy

    def step(self, action) -> tuple[VrState, np.ndarray, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        j = self.config.workload_jitter
        jitter = self._jitter_rng.uniform(1.0 - j, 1.0 + j, size=self.config.n_users)
        delay, energy = self.outcomes(self.state.gains, action, jitter)
        success = (delay <= self._deadline_s) & (energy <= self._budget)
        if self.config.reward == "binary":
            rewards = success.astype(np.float64)
        else:
            rewards = np.where(success, 1.0, -1.0)
        gains = self._channel.draw_gains(self._rng)
        self.state = self._observe(gains, success.astype(np.float64), self.state.step + 1)
        info = {
            "delay_ms": delay * 1000.0,
            "energy_j": energy,
            "workload_factor": jitter,
            "success": success,
            "entity_rewards": rewards.reshape(-1, 1),
            "task_rewards": np.array([rewards.sum()]),
            "terminal": self.state.step >= self.config.episode_length,
        }
        return self.state, rewards, info


def success_rate(episode_rewards) -> float:
    """Percentage of successful user-slots: 100 * sum(r) / (N * T)."""
    r = np.asarray(episode_rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty episode")
    return 100.0 * float((r > 0).sum()) / r.size
