"""Wireless, compute and energy models shared by both environments.

Units are SI throughout: Hz, W, W/Hz, bits, cycles, seconds, joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .numerics import RngStream

FADING_MODES = ("static", "rayleigh_block")


@dataclass(frozen=True)
class QosPreset:
    """Quantitative Metaverse service targets."""

    pixels_per_scene: float = 64e6
    target_fps: float = 120.0
    render_rate_bps: float = 1e9
    mtp_limit_ms: float = 20.0
    haptic_limit_ms: float = 1.0
    fov_horizontal_deg: float = 150.0
    fov_vertical_deg: float = 120.0

    def __post_init__(self):
        for name in ("pixels_per_scene", "target_fps", "render_rate_bps", "mtp_limit_ms",
                     "haptic_limit_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"QoS constant {name} must be positive")

    @property
    def frame_interval_ms(self) -> float:
        return 1000.0 / self.target_fps

    @property
    def rendered_frame_bits(self) -> float:
        """Bits per delivered frame when the render rate is spread over target_fps."""
        return self.render_rate_bps / self.target_fps


@dataclass(frozen=True)
class EnvPreset:
    """A QoS target plus the workload scale used to build environments.

    ``scene_scale`` multiplies per-user uplink scene sizes and workloads;
    ``downlink_bits`` is the size of one rendered frame sent back.
    """

    name: str
    qos: QosPreset
    scene_scale: float
    downlink_bits: float
    description: str


PRESETS = MappingProxyType({
    "metaverse-spec": EnvPreset(
        name="metaverse-spec",
        qos=QosPreset(),
        scene_scale=40.0,
        downlink_bits=QosPreset().rendered_frame_bits,
        description="Full Metaverse targets: 64 Mpixel scenes, 120 FPS, 1 Gbps rendering, "
                    "20 ms MTP, 1 ms haptics. Integration tests only.",
    ),
    "desk-scale": EnvPreset(
        name="desk-scale",
        qos=QosPreset(),
        scene_scale=1.0,
        downlink_bits=1e6,
        description="Same QoS limits with small scenes and workloads for fast training.",
    ),
})


def get_preset(name: str) -> EnvPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


@dataclass
class ChannelModel:
    bandwidth: float
    noise_density: float
    channels: int
    mean_gains: np.ndarray
    fading: str = "rayleigh_block"

    def __post_init__(self):
        self.mean_gains = np.asarray(self.mean_gains, dtype=np.float64)
        if not (self.bandwidth > 0 and self.noise_density > 0):
            raise ValueError("bandwidth and noise density must be positive")
        if self.channels < 1:
            raise ValueError("need at least one channel")
        if np.any(self.mean_gains <= 0):
            raise ValueError("mean gains must be positive")
        if self.fading not in FADING_MODES:
            raise ValueError(f"unknown fading mode {self.fading!r}")

    def draw_gains(self, rng: RngStream) -> np.ndarray:
        """Block-fading power gains; Rayleigh amplitude means exponential power."""
        if self.fading == "static":
            return self.mean_gains.copy()
        return rng.exponential(1.0, size=self.mean_gains.shape) * self.mean_gains


@dataclass
class ComputeModel:
    server_cycles: float
    capabilities: np.ndarray
    workloads: np.ndarray

    def __post_init__(self):
        self.capabilities = np.asarray(self.capabilities, dtype=np.float64)
        self.workloads = np.asarray(self.workloads, dtype=np.float64)
        if self.server_cycles <= 0 or np.any(self.capabilities <= 0) or np.any(self.workloads <= 0):
            raise ValueError("compute quantities must be positive")


@dataclass
class EnergyModel:
    tx_power: np.ndarray
    kappa: float = 1e-27

    def __post_init__(self):
        self.tx_power = np.asarray(self.tx_power, dtype=np.float64)
        if np.any(self.tx_power <= 0) or self.kappa <= 0:
            raise ValueError("tx power and kappa must be positive")


def shannon_rate(b_share: float, p: float, g: float, n0: float) -> float:
    """Capacity in bits/s of a sub-band of width ``b_share``."""
    if not (b_share > 0 and p > 0 and g > 0 and n0 > 0):
        raise ValueError(f"shannon_rate needs positive inputs, got B={b_share}, p={p}, g={g}, N0={n0}")
    return b_share * math.log2(1.0 + p * g / (n0 * b_share))


def share_channel(bandwidth: float, noise_density: float, powers, gains) -> np.ndarray:
    """Per-member rate when ``len(gains)`` members split one band equally.

    A member with zero gain gets rate 0 (its upload is unreachable).
    """
    powers = np.asarray(powers, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    m = gains.size
    if m == 0:
        return np.zeros(0)
    b = bandwidth / m
    rates = np.zeros(m)
    for i in range(m):
        if gains[i] > 0:
            rates[i] = shannon_rate(b, powers[i], gains[i], noise_density)
    return rates


def member_rates(bandwidth: float, noise_density: float, powers, gains, members) -> np.ndarray:
    """Vectorized ``share_channel``: entity j shares its band with ``members[j]`` entities.

    Entries with zero gain (or zero members) get rate 0.
    """
    powers = np.asarray(powers, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    members = np.asarray(members)
    ok = (gains > 0) & (members > 0)
    b = bandwidth / np.where(ok, members, 1)
    rates = np.zeros(gains.shape)
    rates[ok] = b[ok] * np.log2(1.0 + powers[ok] * gains[ok] / (noise_density * b[ok]))
    return rates


def tx_delays(bits, rates) -> np.ndarray:
    """Vectorized ``tx_delay``."""
    bits = np.broadcast_to(np.asarray(bits, dtype=np.float64), np.shape(rates))
    rates = np.asarray(rates, dtype=np.float64)
    out = np.full(rates.shape, np.inf)
    np.divide(bits, rates, out=out, where=rates > 0)
    out[bits == 0] = 0.0
    return out


def tx_delay(bits: float, rate: float) -> float:
    """Seconds to send ``bits``; ``inf`` when the link is unreachable."""
    if bits < 0 or rate < 0:
        raise ValueError("bits and rate must be non-negative")
    if bits == 0:
        return 0.0
    if rate == 0:
        return math.inf
    return bits / rate


def tx_energy(p: float, delay: float) -> float:
    if delay == 0:
        return 0.0
    return p * delay


def local_compute(workload: float, capability: float, kappa: float) -> tuple[float, float]:
    """(delay s, energy J) for on-device processing; energy per cycle is kappa*c^2."""
    if not (workload > 0 and capability > 0 and kappa > 0):
        raise ValueError("local_compute needs positive inputs")
    return workload / capability, kappa * capability**2 * workload


def server_compute(workload: float, server_cycles: float, m_assigned: int) -> float:
    """Seconds on a server whose cycles are split equally among ``m_assigned`` jobs."""
    if not (workload > 0 and server_cycles > 0 and m_assigned >= 1):
        raise ValueError("server_compute needs positive inputs")
    return workload / (server_cycles / m_assigned)
