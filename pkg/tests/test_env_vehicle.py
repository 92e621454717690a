import itertools
import math

import numpy as np
import pytest

from uutmec.agents import ActorCritic, AgentConfig
from uutmec.env_vehicle import LevelTable, VehicleConfig, VehicleEnv, vehicle_metrics
from uutmec.errors import ConfigError
from uutmec.numerics import RngStream


def test_level_table_defaults():
    t = LevelTable.saturating(4, 2e5)
    np.testing.assert_allclose(t.bits, [2e5, 4e5, 6e5, 8e5])
    l = np.arange(1, 5)
    np.testing.assert_allclose(t.accuracy, 0.95 - 0.6 * np.exp(-0.9 * l))
    assert np.all(np.diff(t.bits) > 0) and np.all(np.diff(t.accuracy) > 0)
    assert t.accuracy[-1] <= 1


@pytest.mark.parametrize("bits,acc", [
    ([1, 1], [0.1, 0.2]),
    ([1, 2], [0.3, 0.2]),
    ([1, 2], [0.5, 1.2]),
    ([1, 2, 3], [0.1, 0.2]),
])
def test_level_table_rejects_non_monotone(bits, acc):
    with pytest.raises(ConfigError):
        LevelTable(bits, acc)


def test_structure():
    env = VehicleEnv(VehicleConfig(m_vehicles=3, e_servers=2))
    s = env.reset(0)
    assert env.action_sizes == [[2, 2, 2], [4, 4, 4]]
    # both task states start with the 3 x 2 gain entries
    assert s.level.shape == (6 + 3,) and s.allocation.shape == (6 + 2,)
    one = VehicleEnv(VehicleConfig(e_servers=1))
    assert one.action_sizes[0] == [1, 1, 1, 1]


def test_reset_determinism_and_replay():
    a, b = VehicleEnv(), VehicleEnv()
    np.testing.assert_array_equal(a.reset(4).allocation, b.reset(4).allocation)
    rng = RngStream(0, "test/actions")
    acts = [(rng.integers(0, 2, 4), rng.integers(0, 4, 4)) for _ in range(20)]
    ra = [a.step(x)[1] for x in acts]
    rb = [b.step(x)[1] for x in acts]
    np.testing.assert_array_equal(ra, rb)
    assert all(len(r) == 3 for r in ra)


def test_level_one_vs_top_level_single_vehicle():
    env = VehicleEnv(VehicleConfig(m_vehicles=1, fading="static"))
    env.reset(0)
    gains = env.state.gains
    low = env.delays(gains, [0], [0])
    high = env.delays(gains, [0], [env.table.levels - 1])
    assert low[0] < high[0]
    assert env.table.accuracy[0] < env.table.accuracy[-1]


def test_two_vehicles_hand_computed():
    cfg = VehicleConfig(m_vehicles=2, e_servers=2, fading="static")
    env = VehicleEnv(cfg)
    env.reset(0)
    # vehicle 0 is near server 0, vehicle 1 near server 1; both upload to server 0
    _, r, info = env.step(([0, 0], [0, 1]))
    half = cfg.bandwidth / 2
    snr0 = cfg.tx_power * cfg.near_gain / (cfg.noise_density * half)
    snr1 = cfg.tx_power * cfg.far_gain / (cfg.noise_density * half)
    compute = cfg.detect_workload / (cfg.server_cycles / 2)
    d0 = cfg.s_base / (half * math.log2(1 + snr0)) + compute
    d1 = 2 * cfg.s_base / (half * math.log2(1 + snr1)) + compute
    np.testing.assert_allclose(info["delay_ms"], [d0 * 1e3, d1 * 1e3], rtol=1e-12)
    worst = cfg.bandwidth * math.log2(1 + cfg.tx_power * cfg.far_gain / (cfg.noise_density * cfg.bandwidth))
    norm = 4 * cfg.s_base / worst + cfg.detect_workload / cfg.server_cycles
    assert env.delay_norm == pytest.approx(norm, rel=1e-12)
    assert r[0] == pytest.approx(-(d0 + d1) / 2 / norm, rel=1e-12)
    assert r[1] == pytest.approx(np.mean(env.table.accuracy[[0, 1]]), rel=1e-12)


def test_accuracy_ignores_allocation_and_delay_depends_on_both():
    # no timeout, so every perturbation shows up in the delay
    env = VehicleEnv(VehicleConfig(max_delay=1e9))
    env.reset(1)
    rng = RngStream(2, "test/perturb")
    for _ in range(50):
        gains = env._draw_gains()
        servers = rng.integers(0, 2, 4)
        levels = rng.integers(0, 4, 4)
        other = servers.copy()
        other[0] = 1 - other[0]
        d = env.delays(gains, servers, levels)
        assert not np.allclose(env.delays(gains, other, levels), d)
        up = levels.copy()
        up[1] = (up[1] + 1) % 4
        assert not np.allclose(env.delays(gains, servers, up), d)
    env.reset(1)
    _, r1, _ = env.step(([0, 0, 1, 1], [2, 1, 0, 3]))
    env.reset(1)
    _, r2, _ = env.step(([1, 0, 0, 1], [2, 1, 0, 3]))
    assert r1[1] == r2[1] and r1[0] != r2[0]


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_balanced_assignment_is_optimal(m):
    # identical servers: every vehicle sees the same gain to both of them
    cfg = VehicleConfig(m_vehicles=m, e_servers=2, fading="static", far_gain=1e-10, near_gain=1e-10)
    env = VehicleEnv(cfg)
    env.reset(0)
    gains = env.state.gains
    for level in range(env.table.levels):
        levels = np.full(m, level)
        cost = {a: env.delays(gains, np.array(a), levels).mean()
                for a in itertools.product(range(2), repeat=m)}
        best = min(cost.values())
        balanced = [a for a in cost if abs(2 * sum(a) - m) <= 1]
        assert min(cost[a] for a in balanced) <= best * (1 + 1e-12)
        for a in cost:
            if abs(2 * sum(a) - m) > 1:
                assert cost[a] > best


def test_single_server_single_level_is_degenerate():
    env = VehicleEnv(VehicleConfig(e_servers=1, levels=1))
    env.reset(0)
    _, r, info = env.step(([0] * 4, [0] * 4))
    env.reset(0)
    _, r2, info2 = env.step(([0] * 4, [0] * 4))
    assert info["mean_delay_ms"] == info2["mean_delay_ms"]
    assert env.action_sizes == [[1] * 4, [1] * 4]


def test_vehicle_metrics():
    steps = [{"delay_ms": np.array([10.0, 10.0]), "accuracy": np.array([0.5, 0.5])}] * 3
    assert vehicle_metrics(steps) == (10.0, 0.5)
    two = [{"delay_ms": np.array([10.0]), "accuracy": np.array([0.2])},
           {"delay_ms": np.array([20.0]), "accuracy": np.array([0.4])}]
    d, a = vehicle_metrics(two)
    assert d == pytest.approx(15.0) and a == pytest.approx(0.3)
    with pytest.raises(ValueError):
        vehicle_metrics([])


def test_reward_vectors_per_architecture():
    env = VehicleEnv()
    env.reset(0)
    _, _, info = env.step(([0, 0, 1, 1], [3, 3, 3, 3]))
    lengths = {"traditional": 1, "user_centered": 4, "task_centered": 3, "uut": 9}
    for algo, n in lengths.items():
        agent = ActorCritic(AgentConfig(algo, hidden_sizes=[4]), env.state_dims, env.action_sizes)
        assert agent.reward_vector(info["entity_rewards"], info["task_rewards"]).shape == (n,)


def test_global_reward_is_standardized_mean():
    env = VehicleEnv()
    env.reset(3)
    rng = RngStream(5, "test/actions")
    seen = []
    for _ in range(30):
        _, r, info = env.step((rng.integers(0, 2, 4), rng.integers(0, 4, 4)))
        seen.append(info["task_rewards"])
        arr = np.array(seen)
        if len(seen) >= 2:
            z = (arr[-1] - arr.mean(axis=0)) / np.maximum(arr.std(axis=0, ddof=1), 1e-8)
            assert r[2] == pytest.approx(z.mean(), abs=1e-12)


def test_config_errors():
    with pytest.raises(ConfigError):
        VehicleEnv(VehicleConfig(levels=0))
    with pytest.raises(ConfigError):
        VehicleEnv(VehicleConfig(level_bits=[1, 2, 3, 4]))
    with pytest.raises(ConfigError):
        VehicleEnv(VehicleConfig(far_gain=0.0))
    env = VehicleEnv(VehicleConfig(level_bits=[1e5, 2e5, 3e5, 4e5], level_accuracy=[0.5, 0.6, 0.7, 0.8]))
    assert env.table.accuracy.tolist() == [0.5, 0.6, 0.7, 0.8]
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(([0, 0, 2, 0], [0, 0, 0, 0]))


def test_deep_fade_is_capped_at_timeout():
    cfg = VehicleConfig(m_vehicles=2, fading="static", max_delay=0.5)
    env = VehicleEnv(cfg)
    env.reset(0)
    gains = env.state.gains.copy()
    gains[0, 0] = 0.0
    gains[1, 0] *= 1e-9
    d = env.delays(gains, [0, 0], [3, 3])
    assert d.tolist() == [0.5, 0.5]
    # a healthy near link is untouched by the cap
    fine = env.delays(env.state.gains, [0, 1], [0, 0])
    assert np.all(fine < 0.5)
    assert env.delay_norm <= cfg.max_delay
    with pytest.raises(ConfigError):
        VehicleEnv(VehicleConfig(max_delay=0.0))
