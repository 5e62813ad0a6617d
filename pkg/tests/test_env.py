import csv

import numpy as np
import pytest

from afglosa.env import (OBS_SCALE, EnvConfig, EpisodeFinished, GlosaEnv, HybridAction,
                         Observation, RewardConfig, Scenario, accumulate_metrics, compute_reward,
                         normalize, wait_time, write_trace)
from afglosa.sim import GREEN, RED


def free_env(step=2):
    """Empty road with a signal that stays green for the whole trip."""
    sc = Scenario(green_duration=2000.0, red_duration=20.0, densities=(0,))
    return GlosaEnv(sc, EnvConfig(control_step=step), density=0)


def drive_into_zone(env):
    obs = env.reset(0, signal_offset=0.0, depart_time=0)
    while not env.in_zone():
        obs, *_ = env.step(HybridAction(0))
    return obs


def test_wait_time_encodings():
    assert wait_time(RED, 7.0, 20.0) == 7.0
    assert wait_time(GREEN, 5.0, 20.0) == 25.0
    assert wait_time(GREEN, 5.0, 20.0, "s1") == 0.0


def test_worked_state_is_representable():
    obs = Observation(30, 8, 2.5, 2, 22, 11, 8, 0)
    assert obs.w_t == obs.m_t + 20
    x = normalize(obs)
    assert x.shape == (8,)
    np.testing.assert_allclose(x * OBS_SCALE, obs.as_array())


def test_reward_examples():
    cfg = RewardConfig()
    obs = Observation(100, 8, 0, 10, 30, 11, 300, 0)
    _, parts = compute_reward(obs, HybridAction(1, 1.0), 0.0, 8.0, cfg, 2)
    assert parts["r3"] == 5
    _, parts = compute_reward(obs, HybridAction(0), 0.0, 8.0, cfg, 2)
    assert parts["r3"] == 4
    slow = obs._replace(v_t=0.05)
    R, parts = compute_reward(slow, HybridAction(0), 50.0, 0.05, cfg, 2)
    assert (parts["r2"], parts["r3"]) == (-200, -2)
    assert R == pytest.approx(-145.0, abs=1e-12)


def test_hybrid_action_validation():
    with pytest.raises(ValueError):
        HybridAction(2)
    with pytest.raises(ValueError):
        HybridAction(1, 3.5)


def test_accumulate_metrics_hand_trajectories():
    m = accumulate_metrics([5, 6, 7, 8])
    assert (m.wti, m.wco) == (0, 0)
    speeds = [5, 0, 0, 0, 0, 0, 3, 4, 0, 0, 6]
    m = accumulate_metrics(speeds)
    assert (m.wti, m.wco) == (7, 2)


def test_advisory_speed_change_without_leader():
    env = free_env()
    obs = drive_into_zone(env)
    assert obs.v_t == pytest.approx(11.0)
    obs, *_ = env.step(HybridAction(1, -1.5))
    assert obs.v_t == pytest.approx(8.0)
    obs, *_ = env.step(HybridAction(0))
    assert obs.v_t == pytest.approx(8.0)
    obs, _, _, info = env.step(HybridAction(1, 1.0))
    assert info["valid_advisory"]
    assert obs.v_t == pytest.approx(10.0)


def test_invalid_advisory_is_ignored_and_flagged():
    env = free_env()
    obs = drive_into_zone(env)
    obs, *_ = env.step(HybridAction(1, -0.5))
    v = obs.v_t
    obs, R, _, info = env.step(HybridAction(1, 2.0))   # v_aim = v + 4 > 11
    assert not info["valid_advisory"]
    assert info["r3"] == -2
    # the vehicle falls back to car following, which accelerates toward the limit
    assert obs.v_t > v


def test_advisory_has_no_effect_before_zone():
    a, b = free_env(), free_env()
    oa = a.reset(0, signal_offset=0.0, depart_time=0)
    b.reset(0, signal_offset=0.0, depart_time=0)
    while not a.in_zone():
        oa, *_ = a.step(HybridAction(0))
        ob, *_ = b.step(HybridAction(1, -3.0))
        assert oa == ob


def test_signal_frozen_after_crossing_and_distance_to_route_end():
    env = free_env()
    env.reset(0, signal_offset=0.0, depart_time=0)
    while not env.crossed():
        env.step(HybridAction(0))
    o1 = env.observe()
    o2, *_ = env.step(HybridAction(0))
    assert (o1.p_t, o1.m_t, o1.w_t) == (o2.p_t, o2.m_t, o2.w_t)
    road = env.scenario.road
    assert o2.l_t == pytest.approx(road.route_length - env.cav.position)


def test_step_after_done_raises_and_fuel_adds_up():
    env = GlosaEnv(density=300)
    env.reset(4)
    total, done = 0.0, False
    while not done:
        _, _, done, info = env.step(HybridAction(0))
        total += info["metrics_delta"].fuel
    assert total == env.metrics.fuel
    with pytest.raises(EpisodeFinished):
        env.step(HybridAction(0))


def test_reset_determinism_and_density_monotonicity():
    env = GlosaEnv(density=300)
    assert env.reset(9) == env.reset(9)
    counts = {}
    for d in (300, 2700):
        counts[d] = np.mean([(env.reset(s, density=d), env.world.n_active)[1] for s in range(20)])
    assert counts[300] < counts[2700]


def test_reset_rejects_unknown_density():
    with pytest.raises(ValueError):
        GlosaEnv(density=500).reset(0)


def test_trace_rows_and_export(tmp_path):
    env = GlosaEnv(density=300)
    env.record_trace = True
    env.reset(2)
    done = False
    while not done:
        _, _, done, _ = env.step(HybridAction(0))
    assert len(env.trace) == int(env.elapsed) + 1
    assert env.trace[-1]["fuel_cum"] == pytest.approx(env.metrics.fuel)
    path = tmp_path / "trace.csv"
    write_trace(env.trace, path, ["seed 2"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed 2"
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ["t", "position", "speed", "accel", "phase", "fuel_cum", "gap_bit",
                             "accel_adv"]
    assert len(rows) == len(env.trace)
