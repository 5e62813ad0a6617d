import numpy as np
import pytest

from afglosa.baselines import (BenchmarkPolicy, LearnedPolicy, RuleGlosaPolicy, green_windows,
                               rule_target_speed)
from afglosa.env import GlosaEnv, HybridAction, Observation
from afglosa.nets import PolicySet
from afglosa.sim import GREEN, RED


def test_green_windows_from_red_and_green():
    assert green_windows(RED, 5.0, 20.0, 20.0, 70.0) == [(5.0, 25.0), (45.0, 65.0)]
    assert green_windows(GREEN, 3.0, 20.0, 20.0, 50.0) == [(0.0, 3.0), (23.0, 43.0)]


def test_rule_speed_hand_example():
    # 240 m at 11 m/s arrives after 21.8 s, inside red; green opens in 30 s
    v = rule_target_speed(240.0, 11.0, RED, 30.0, 20.0, 30.0, 4.0, 11.0)
    assert v == pytest.approx(8.0)


def test_rule_speed_none_when_constant_speed_arrives_in_green():
    assert rule_target_speed(100.0, 10.0, GREEN, 15.0, 20.0, 20.0, 4.0, 11.0) is None


def test_rule_speed_falls_back_to_minimum():
    # green opens only after the slowest allowed arrival (200/4 = 50 s)
    v = rule_target_speed(200.0, 11.0, RED, 60.0, 5.0, 60.0, 4.0, 11.0)
    assert v == 4.0


def test_rule_policy_advises_at_most_once():
    pol = RuleGlosaPolicy()
    obs = Observation(240.0, 11.0, 0.0, 30.0, 30.0, 11.0, 300.0, RED)
    a = pol(obs)
    assert a.gap_bit == 1 and a.accel_adv == pytest.approx(-1.5)
    assert pol(obs._replace(l_t=200.0)).gap_bit == 0
    assert pol.events == 1
    pol.begin_episode()
    assert pol.events == 0


def test_rule_policy_silent_outside_zone():
    pol = RuleGlosaPolicy()
    assert pol(Observation(400.0, 11.0, 0.0, 30.0, 30.0, 11.0, 300.0, RED)) == HybridAction(0)
    assert not pol.decided


def test_benchmark_never_advises():
    assert BenchmarkPolicy()(Observation(100, 5, 0, 5, 5, 11, 300, 1)) == HybridAction(0)


def run(env, policy, seed):
    obs, done = env.reset(seed), False
    while not done:
        obs, _, done, _ = env.step(policy(obs))
    return env.metrics


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_forced_gap_zero_matches_benchmark(seed):
    env = GlosaEnv(density=1200)
    learned = LearnedPolicy(PolicySet(seed=seed), deterministic=False, seed=seed, force_gap=0)
    assert run(env, learned, seed) == run(env, BenchmarkPolicy(), seed)


def test_rule_glosa_cuts_stops_over_seeds():
    env = GlosaEnv(density=300)
    bench = [run(env, BenchmarkPolicy(), s).wco for s in range(30)]
    rule = RuleGlosaPolicy()
    ruled = []
    for s in range(30):
        rule.begin_episode()
        ruled.append(run(env, rule, s).wco)
    assert np.mean(ruled) < np.mean(bench)


def test_continuous_only_policy_advises_every_epoch():
    env = GlosaEnv(density=300)
    pol = LearnedPolicy(PolicySet(seed=0, discrete=False), deterministic=True)
    obs, done, epochs, gaps = env.reset(5), False, 0, 0
    while not done:
        act = pol(obs)
        gaps += act.gap_bit
        epochs += 1
        obs, _, done, _ = env.step(act)
    assert gaps == epochs
