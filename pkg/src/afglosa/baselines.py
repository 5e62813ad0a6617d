"""Comparison policies: no advisory, single-shot rule-based GLOSA, and the
learned policies (with and without the gap head).

A policy is called once per decision epoch with the current observation and
returns a :class:`HybridAction`. ``begin_episode`` clears per-trip state.
"""
from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from .env import HybridAction, Observation, RewardConfig, normalize
from .nets import PolicySet
from .sim import GREEN


class BaselineKind(str, Enum):
    benchmark = "benchmark"
    rule_glosa = "rule_glosa"
    l_glosa = "l_glosa"


class BenchmarkPolicy:
    """Never advises; the vehicle drives as a plain car follower."""
    name = "benchmark"

    def begin_episode(self):
        pass

    def __call__(self, obs: Observation) -> HybridAction:
        return HybridAction(0)


def green_windows(phase: int, remaining: float, green: float, red: float, horizon: float):
    """Green intervals ``(start, end)`` relative to now, up to ``horizon``."""
    out = []
    t = 0.0
    if phase == GREEN:
        out.append((0.0, remaining))
        t = remaining + red
    else:
        t = remaining
    while t < horizon:
        out.append((t, t + green))
        t += green + red
    return out


def rule_target_speed(l_t: float, v_t: float, phase: int, remaining: float, green: float,
                      red: float, v_min: float, v_max: float) -> Optional[float]:
    """Single-shot advisory speed, or None when the current speed already
    reaches the line during green."""
    horizon = l_t / v_min + green + red
    windows = green_windows(phase, remaining, green, red, horizon)
    if v_t > 0:
        t_arr = l_t / v_t
        if any(s <= t_arr < e for s, e in windows):
            return None
    t_lo, t_hi = l_t / v_max, l_t / v_min
    for s, e in windows:
        lo, hi = max(s, t_lo), min(e, t_hi)
        if lo <= hi and lo > 0:
            return l_t / lo
    return v_min


class RuleGlosaPolicy:
    """Rule-based GLOSA that advises at most once, on entering the guidance zone.

    The advisory sets a target speed that the vehicle then holds through the
    following gap periods.
    """
    name = "rule_glosa"

    def __init__(self, zone_length: float = 240.0, green: float = 20.0, red: float = 20.0,
                 control_step: int = 2, reward: RewardConfig = RewardConfig()):
        self.zone_length = zone_length
        self.green, self.red = green, red
        self.control_step = control_step
        self.v_min, self.v_max = reward.v_min, reward.v_max
        self.begin_episode()

    def begin_episode(self):
        self.decided = False
        self.events = 0
        self.target: Optional[float] = None

    def __call__(self, obs: Observation) -> HybridAction:
        in_zone = 0.0 < obs.l_t <= self.zone_length and not self.decided
        if not in_zone:
            return HybridAction(0)
        self.decided = True
        self.target = rule_target_speed(obs.l_t, obs.v_t, int(obs.p_t), obs.m_t, self.green,
                                        self.red, self.v_min, self.v_max)
        if self.target is None:
            return HybridAction(0)
        acc = float(np.clip((self.target - obs.v_t) / self.control_step, -3.0, 3.0))
        self.events += 1
        return HybridAction(1, acc)


class LearnedPolicy:
    """Wraps a :class:`PolicySet`. A policy without a gap head advises every epoch.

    ``force_gap`` hard-wires the gap bit (used for the Benchmark equivalence check).
    """

    def __init__(self, policy: PolicySet, deterministic: bool = True, seed: int = 0,
                 force_gap: Optional[int] = None, name: str = "af_glosa"):
        self.policy = policy
        self.deterministic = deterministic
        self.seed = seed
        self.force_gap = force_gap
        self.name = name
        self.rng = np.random.default_rng(seed)

    def begin_episode(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, seed, 5]))

    def __call__(self, obs: Observation) -> HybridAction:
        gap, a, raw, lpd, lpc = self.policy.act(normalize(obs), self.rng, self.deterministic)
        if self.force_gap is not None:
            gap = self.force_gap
        return HybridAction(gap, a, lpd, lpc)
