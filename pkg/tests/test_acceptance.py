"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 3 and 4 train 15 agents for 2000 episodes each and take several
minutes. Run just this file with ``pytest tests/test_acceptance.py``.
"""

import json
import math
import time

import numpy as np
import pytest

from _support import parameter_trajectory, trajectories_identical
from uutmec import cli
from uutmec.agents import AgentConfig, RandomAgent
from uutmec.env_vehicle import LevelTable, VehicleConfig, VehicleEnv
from uutmec.env_vr import DEFAULT_ROSTER, VrConfig, VrEnv
from uutmec.envcore import get_preset
from uutmec.harness import compare, config_from_dict, evaluate, gradcheck_all
from uutmec.numerics import RngStream

SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
        assert ok, detail
    return _report


# -- 1 ---------------------------------------------------------------------------------

def test_1_gradcheck(report):
    t0 = time.perf_counter()
    res = gradcheck_all(h=1e-5)
    elapsed = time.perf_counter() - t0
    ok = res["max"] <= 1e-4 and elapsed < 30.0
    report(1, "gradcheck", ok, f"max rel err {res['max']:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)")


# -- 2 ---------------------------------------------------------------------------------

def test_2_degeneracy(report):
    vr = lambda n: VrEnv(VrConfig(n_users=n, episode_length=16))
    veh = lambda m: VehicleEnv(VehicleConfig(m_vehicles=m, episode_length=16))
    no_global = dict(global_mix=0.0, global_head=False)
    cases = {
        "UC(N=1)==trad": (AgentConfig("user_centered"), AgentConfig("traditional"), vr(1)),
        "TC(K=1,lg=0)==trad": (AgentConfig("task_centered", **no_global), AgentConfig("traditional"), vr(4)),
        "UUT(N=1)==TC": (AgentConfig("uut"), AgentConfig("task_centered"), veh(1)),
        "UUT(K=1,lg=0)==UC": (AgentConfig("uut", **no_global), AgentConfig("user_centered"), vr(4)),
    }
    results = {}
    for name, (a, b, env) in cases.items():
        results[name] = trajectories_identical(parameter_trajectory(a, env, updates=10),
                                               parameter_trajectory(b, env, updates=10))
    detail = ", ".join(f"{k}:{'identical' if v else 'DIFFERENT'}" for k, v in results.items())
    report(2, "degeneracy over 10 updates", all(results.values()), detail)


# -- 3 and 4 ---------------------------------------------------------------------------

def _compare(env_block, algorithms):
    configs = [config_from_dict({"env": env_block, "agent": {"algorithm": a},
                                 "training": {"episodes": 2000}}) for a in algorithms]
    t0 = time.perf_counter()
    summary = compare(configs, SEEDS)["summary"]
    return summary, time.perf_counter() - t0


def test_3_vr_ordering(report):
    summary, elapsed = _compare({"vr": {}}, ["user_centered", "traditional", "random"])
    sr = {a: np.array([summary[a][s]["success_rate"] for s in SEEDS]) for a in summary}
    uc, trad, rnd = sr["user_centered"], sr["traditional"], sr["random"]
    wins = int(np.sum((uc > trad) & (trad > rnd)))
    margin = float(uc.mean() - rnd.mean())
    ok = wins >= 4 and margin >= 10.0
    detail = (f"UC>trad>random in {wins}/5 seeds (>= 4), UC-random {margin:.1f} pp (>= 10); "
              f"UC {np.round(uc, 1).tolist()} trad {np.round(trad, 1).tolist()} "
              f"random {np.round(rnd, 1).tolist()}; {elapsed / 60:.1f} min (target 10)")
    report(3, "VR success-rate ordering", ok, detail)


def test_4_vehicle_ordering(report):
    summary, elapsed = _compare({"vehicle": {}}, ["task_centered", "traditional", "random"])
    d = {a: np.array([summary[a][s]["mean_delay_ms"] for s in SEEDS]) for a in summary}
    acc = {a: np.array([summary[a][s]["mean_accuracy"] for s in SEEDS]) for a in summary}
    tc, tr, rn = "task_centered", "traditional", "random"
    good = ((d[tc] <= d[tr]) & (d[tr] <= d[rn]) & (acc[tc] >= acc[tr]) & (acc[tr] >= acc[rn]))
    wins = int(good.sum())
    detail = (f"both orderings in {wins}/5 seeds (>= 4); delay ms TC {np.round(d[tc], 1).tolist()} "
              f"trad {np.round(d[tr], 1).tolist()} random {np.round(d[rn], 1).tolist()}; "
              f"accuracy TC {np.round(acc[tc], 3).tolist()} trad {np.round(acc[tr], 3).tolist()} "
              f"random {np.round(acc[rn], 3).tolist()}; {elapsed / 60:.1f} min (target 10)")
    report(4, "vehicle delay/accuracy ordering", wins >= 4, detail)


# -- 5 ---------------------------------------------------------------------------------
# The oracles below re-derive the uniform policy's metrics from the physical
# model with their own sampler; they share only parameter values with the
# environments.

ORACLE_STEPS = 100_000


def _vr_oracle(rng, steps):
    cfg = VrConfig()
    pre = get_preset(cfg.preset)
    users = DEFAULT_ROSTER[:cfg.n_users]
    hits = 0
    for t in range(steps):
        act = rng.integers(0, cfg.channels + 1, size=cfg.n_users)
        n_off = max(1, int(np.sum(act > 0)))
        for i, u in enumerate(users):
            gain = u.mean_gain * rng.exponential()
            work = u.workload * rng.uniform(1 - cfg.workload_jitter, 1 + cfg.workload_jitter)
            if act[i] == 0:
                delay = work / u.capability
                energy = cfg.kappa * u.capability ** 2 * work
            else:
                band = cfg.bandwidth / int(np.sum(act == act[i]))
                rate = band * math.log2(1 + u.tx_power * gain / (cfg.noise_density * band))
                up = u.scene_bits / rate if rate > 0 else math.inf
                delay = up + work / (cfg.server_cycles / n_off) + pre.downlink_bits / pre.qos.render_rate_bps
                energy = u.tx_power * up
            deadline = min(1.0 / u.fps, u.delay_tolerance_ms / 1000.0)
            hits += delay <= deadline and energy <= u.energy_budget
    return 100.0 * hits / (steps * cfg.n_users)


def _vehicle_oracle(rng, steps):
    cfg = VehicleConfig()
    M, E, L = cfg.m_vehicles, cfg.e_servers, cfg.levels
    table = LevelTable.saturating(L, cfg.s_base, cfg.accuracy_max, cfg.accuracy_b, cfg.accuracy_c)
    delays, accs = [], []
    for t in range(steps):
        servers = rng.integers(0, E, size=M)
        levels = rng.integers(0, L, size=M)
        for j in range(M):
            near = servers[j] == j * E // M
            gain = (cfg.near_gain if near else cfg.far_gain) * rng.exponential()
            m = int(np.sum(servers == servers[j]))
            band = cfg.bandwidth / m
            rate = band * math.log2(1 + cfg.tx_power * gain / (cfg.noise_density * band))
            d = table.bits[levels[j]] / rate + cfg.detect_workload * m / cfg.server_cycles
            delays.append(min(d, cfg.max_delay))
            accs.append(table.accuracy[levels[j]])
    return 1000.0 * float(np.mean(delays)), float(np.mean(accs))


def test_5_random_agent_matches_oracle(report):
    rng = np.random.default_rng(20240601)
    vr_env = VrEnv()
    vr_eps = math.ceil(ORACLE_STEPS / vr_env.episode_length)
    vr_h = evaluate(RandomAgent(vr_env.action_sizes), "vr", VrConfig(), vr_eps, 0)["success_rate"][0]
    vr_o = _vr_oracle(rng, ORACLE_STEPS)

    veh_env = VehicleEnv()
    veh_eps = math.ceil(ORACLE_STEPS / veh_env.episode_length)
    res = evaluate(RandomAgent(veh_env.action_sizes), "vehicle", VehicleConfig(), veh_eps, 0)
    d_h, a_h = res["mean_delay_ms"][0], res["mean_accuracy"][0]
    d_o, a_o = _vehicle_oracle(rng, ORACLE_STEPS)

    ok = abs(vr_h - vr_o) <= 1.0 and abs(d_h - d_o) <= 0.02 * d_o and abs(a_h - a_o) <= 0.02 * a_o
    detail = (f"VR success {vr_h:.2f} vs oracle {vr_o:.2f} (<= 1 pp); "
              f"delay {d_h:.1f} vs {d_o:.1f} ms, accuracy {a_h:.4f} vs {a_o:.4f} (<= 2% rel)")
    report(5, "random agent vs Monte-Carlo oracle", ok, detail)


# -- 6 ---------------------------------------------------------------------------------

def test_6_byte_identical_csv(tmp_path, report):
    same = []
    for name, block in (("vr", {"vr": {}, "agent": {"algorithm": "uut"}}),
                        ("vehicle", {"vehicle": {}, "agent": {"algorithm": "task_centered"}})):
        data = {"env": {k: v for k, v in block.items() if k != "agent"}, "agent": block["agent"],
                "training": {"episodes": 60}, "seed": 11}
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(data))
        outs = []
        for run in ("a", "b"):
            assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / run)]) == 0
            csv = next((tmp_path / run).glob(f"{name}-*/metrics.csv"))
            outs.append(csv.read_bytes())
        same.append(outs[0] == outs[1] and len(outs[0]) > 100)
    report(6, "byte-identical metrics CSV", all(same), f"vr {same[0]}, vehicle {same[1]}")


# -- 7 ---------------------------------------------------------------------------------

def _vr_invariants():
    failures = []
    env = VrEnv()
    rng = RngStream(0, "acceptance/vr")
    state = env.reset(0)
    for t in range(env.episode_length):
        action = rng.integers(0, env.config.channels + 1, size=env.config.n_users)
        gains = state.gains
        delay, energy = env.outcomes(gains, action)
        if not (np.all(delay > 0) and np.all(energy >= 0)):
            failures.append("non-positive delay or negative energy")
        for i in np.flatnonzero(action > 0):
            crowded = action.copy()
            crowded[crowded == 0] = action[i]
            if env.outcomes(gains, crowded)[0][i] < delay[i]:
                failures.append("crowding lowered a delay")
        state, r, info = env.step(action)
        if not set(r.tolist()) <= {0.0, 1.0}:
            failures.append("reward outside {0, 1}")
        if info["terminal"] != (t == env.episode_length - 1):
            failures.append("terminal flag misplaced")
        if state.vector.shape != (env.state_dims[0],):
            failures.append("state shape changed")
    return failures


def _vehicle_invariants():
    failures = []
    env = VehicleEnv()
    rng = RngStream(0, "acceptance/vehicle")
    state = env.reset(0)
    acc = env.table.accuracy
    if not np.all(np.diff(acc) > 0) or not np.all(np.diff(env.table.bits) > 0):
        failures.append("level table not increasing")
    for t in range(env.episode_length):
        servers = rng.integers(0, 2, size=4)
        levels = rng.integers(0, 4, size=4)
        d = env.delays(state.gains, servers, levels)
        if not (np.all(d > 0) and np.all(d <= env.config.max_delay)):
            failures.append("delay outside (0, max_delay]")
        up = np.minimum(levels + 1, 3)
        if np.any(env.delays(state.gains, servers, up) < d):
            failures.append("higher level lowered a delay")
        state, r, info = env.step((servers, levels))
        if not np.array_equal(info["accuracy"], acc[levels]) or r.shape != (3,):
            failures.append("accuracy or reward shape wrong")
        if not (-env.config.max_delay / env.delay_norm <= r[0] < 0 and 0 < r[1] <= 1):
            failures.append("task reward out of range")
    return failures


def test_7_environment_invariants(report):
    failures = _vr_invariants() + _vehicle_invariants()
    report(7, "environment invariants", not failures,
           "all hold" if not failures else "; ".join(sorted(set(failures))))


# -- 8 ---------------------------------------------------------------------------------

def test_8_metaverse_preset(report):
    q = get_preset("metaverse-spec").qos
    got = (q.pixels_per_scene, q.target_fps, q.mtp_limit_ms, q.haptic_limit_ms, q.render_rate_bps)
    ok = got == (64e6, 120, 20, 1, 1e9)
    report(8, "metaverse-spec preset", ok,
           f"pixels {got[0]:g}, fps {got[1]:g}, MTP {got[2]:g} ms, haptic {got[3]:g} ms, "
           f"render {got[4]:g} bps")
