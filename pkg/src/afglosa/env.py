"""Speed-advisory MDP on top of the traffic world.

One decision epoch spans ``control_step`` simulated seconds. The action is a
pair (gap bit, advised acceleration): gap bit 0 leaves the vehicle in its
current driving state, gap bit 1 issues a new acceleration advisory.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .sim import (RED, EmissionModel, IDMParams, RoadConfig, SignalController,
                  Vehicle, World, HDV_CLASSES)


class EpisodeFinished(RuntimeError):
    pass


class Observation(NamedTuple):
    l_t: float
    v_t: float
    a_t: float
    m_t: float
    w_t: float
    pre_v: float
    pre_d: float
    p_t: int

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


OBS_SCALE = np.array([240.0, 11.0, 3.0, 40.0, 40.0, 11.0, 300.0, 1.0])


def normalize(obs) -> np.ndarray:
    """Divide each field by its fixed scale; accepts one observation or a stack."""
    return np.asarray(obs, dtype=np.float64) / OBS_SCALE


@dataclass
class HybridAction:
    gap_bit: int
    accel_adv: float = 0.0
    logp_d: float = 0.0
    logp_c: float = 0.0

    def __post_init__(self):
        if self.gap_bit not in (0, 1):
            raise ValueError(f"gap_bit must be 0 or 1, got {self.gap_bit!r}")
        if not -3.0 <= self.accel_adv <= 3.0:
            raise ValueError(f"accel_adv {self.accel_adv} outside [-3, 3]")


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = -0.1
    beta: float = 0.6
    omega: float = 10.0
    stop_penalty: float = -200.0
    stop_speed_threshold: float = 0.1
    r3_good_control: float = 5.0
    r3_bad: float = -2.0
    r3_gap: float = 4.0
    v_min: float = 4.0
    v_max: float = 11.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.stop_speed_threshold <= 0:
            raise ValueError("stop_speed_threshold must be positive")


@dataclass(frozen=True)
class EnvConfig:
    control_step: int = 2
    horizon: float = 400.0
    depart_window: int = 40
    wt_mode: str = "s2"

    def __post_init__(self):
        if self.control_step <= 0:
            raise ValueError("control_step must be positive")
        if self.wt_mode not in ("s1", "s2"):
            raise ValueError("wt_mode must be 's1' or 's2'")
        if self.depart_window < 0 or self.horizon <= 0:
            raise ValueError("depart_window must be >= 0 and horizon > 0")


@dataclass
class EpisodeMetrics:
    wti: float = 0.0
    wco: int = 0
    co2: float = 0.0
    fuel: float = 0.0

    def __add__(self, other: "EpisodeMetrics") -> "EpisodeMetrics":
        return EpisodeMetrics(self.wti + other.wti, self.wco + other.wco,
                              self.co2 + other.co2, self.fuel + other.fuel)


def wait_time(phase: int, remaining: float, red_duration: float, mode: str = "s2") -> float:
    if phase == RED:
        return remaining
    return remaining + red_duration if mode == "s2" else 0.0


def r3_term(gap_bit: int, v_t: float, accel_adv: float, control_step: float,
            cfg: RewardConfig) -> float:
    if gap_bit == 1:
        v_aim = v_t + accel_adv * control_step
        return cfg.r3_good_control if cfg.v_min <= v_aim <= cfg.v_max else cfg.r3_bad
    return cfg.r3_bad if v_t < cfg.v_min else cfg.r3_gap


def compute_reward(obs: Observation, act: HybridAction, fuel_step: float, v_next: float,
                   cfg: RewardConfig, control_step: float) -> tuple[float, dict]:
    r1 = fuel_step
    r2 = cfg.stop_penalty if v_next <= cfg.stop_speed_threshold else 0.0
    r3 = r3_term(act.gap_bit, obs.v_t, act.accel_adv, control_step, cfg)
    R = cfg.alpha * r1 + cfg.beta * r2 + cfg.omega * r3
    return R, {"r1": r1, "r2": r2, "r3": r3}


def accumulate_metrics(speeds, fuels=(), co2s=(), stop_speed_threshold: float = 0.1,
                       dt: float = 1.0) -> EpisodeMetrics:
    """Metrics of a 1 s resolution trajectory (speed at the end of each tick)."""
    m = EpisodeMetrics(fuel=float(sum(fuels)), co2=float(sum(co2s)))
    stopped = False
    for v in speeds:
        now = v <= stop_speed_threshold
        if now:
            m.wti += dt
            if not stopped:
                m.wco += 1
        stopped = now
    return m


TRACE_FIELDS = ("t", "position", "speed", "accel", "phase", "fuel_cum", "gap_bit", "accel_adv")


@dataclass
class Scenario:
    road: RoadConfig = field(default_factory=RoadConfig)
    green_duration: float = 20.0
    red_duration: float = 20.0
    classes: tuple = HDV_CLASSES
    emission: EmissionModel = field(default_factory=EmissionModel)
    idm: IDMParams = field(default_factory=IDMParams)
    densities: tuple = (300, 1200, 2700)


class GlosaEnv:
    """Single-CAV advisory environment.

    ``step`` takes a :class:`HybridAction` and returns
    ``(observation, reward, done, info)``.
    """

    def __init__(self, scenario: Optional[Scenario] = None, config: Optional[EnvConfig] = None,
                 reward: Optional[RewardConfig] = None, density: float = 300.0):
        self.scenario = scenario or Scenario()
        self.config = config or EnvConfig()
        self.reward_cfg = reward or RewardConfig()
        self.density = density
        self.world: Optional[World] = None
        self.record_trace = False

    # -- episode lifecycle ---------------------------------------------
    def reset(self, seed: int, density: Optional[float] = None, depart_window: Optional[int] = None,
              signal_offset: Optional[float] = None, depart_time: Optional[int] = None) -> Observation:
        """Start an episode.

        The signal offset and depart time come from one seed stream, HDV
        traffic from another, so two methods run on the same seed meet the
        same background traffic.
        """
        sc = self.scenario
        if density is not None:
            self.density = density
        if self.density not in sc.densities:
            raise ValueError(f"density {self.density} not in configured levels {sc.densities}")
        window = self.config.depart_window if depart_window is None else depart_window
        if window < 0:
            raise ValueError("depart_window must be >= 0")
        setup_ss, traffic_ss = np.random.SeedSequence(seed).spawn(2)
        setup = np.random.default_rng(setup_ss)
        cycle = sc.green_duration + sc.red_duration
        offset = setup.uniform(0.0, cycle)
        depart = int(setup.integers(0, window + 1))
        if signal_offset is not None:
            offset = signal_offset
        if depart_time is not None:
            depart = depart_time
        signal = SignalController(sc.green_duration, sc.red_duration, offset)
        self.world = World(sc.road, signal, self.density, np.random.default_rng(traffic_ss),
                           classes=sc.classes, emission=sc.emission, idm=sc.idm)
        w = self.world
        for _ in range(int(math.ceil(cycle)) + depart):
            w.advance()
        while not w.insert_cav():
            w.advance()
        self.cav: Vehicle = w.cav
        self.t0 = w.t
        self.metrics = EpisodeMetrics()
        self.done = False
        self.target_speed: Optional[float] = None
        self._stopped = False
        self._frozen_signal = None
        self.advisories = 0
        self.trace = []
        if self.record_trace:
            self._trace_row(0, 0.0, 0.0)
        return self.observe()

    @property
    def elapsed(self) -> float:
        return self.world.t - self.t0

    def crossed(self) -> bool:
        return self.cav.position > self.scenario.road.stop_line_position

    def in_zone(self) -> bool:
        road = self.scenario.road
        l_t = road.stop_line_position - self.cav.position
        return 0.0 <= l_t <= road.guidance_zone_length

    # -- observation ---------------------------------------------------
    def _signal_view(self) -> tuple[int, float, float]:
        if self._frozen_signal is not None:
            return self._frozen_signal
        p, m = self.world.phase()
        view = (p, m, wait_time(p, m, self.scenario.red_duration, self.config.wt_mode))
        if self.crossed():
            self._frozen_signal = view
        return view

    def _build_obs(self) -> Observation:
        road = self.scenario.road
        cav = self.cav
        if self.crossed():
            l_t = max(0.0, road.route_length - cav.position)
        else:
            l_t = road.stop_line_position - cav.position
        p, m, wt = self._signal_view()
        pre_v, pre_d = road.speed_limit, road.detector_length
        if not self.world.cav_exited:
            lead = self.world.leader_of(cav)
            if lead is not None and lead.rear - cav.position <= road.detector_length:
                pre_v, pre_d = lead.speed, lead.rear - cav.position
        return Observation(l_t, cav.speed, cav.accel, m, wt, pre_v, pre_d, p)

    def observe(self) -> Observation:
        if self.world is None or self.world.cav_exited:
            raise EpisodeFinished("controlled vehicle has left the network")
        return self._build_obs()

    # -- control -------------------------------------------------------
    def _command(self, act: HybridAction, obs: Observation):
        """Per-tick CAV acceleration command for this decision epoch, or None
        for plain car following. Also reports whether the advisory was valid."""
        cfg = self.reward_cfg
        step = self.config.control_step
        if not self.in_zone():
            self.target_speed = None
            return None, True
        if act.gap_bit == 1:
            v_aim = obs.v_t + act.accel_adv * step
            if not cfg.v_min <= v_aim <= cfg.v_max:
                self.target_speed = None
                return None, False
            self.advisories += 1
            self.target_speed = v_aim
            a = act.accel_adv
            return (lambda veh, idm_acc: a), True
        if self.target_speed is None:
            return None, True
        target = self.target_speed
        dt = self.world.dt
        return (lambda veh, idm_acc: min(3.0, max(-3.0, (target - veh.speed) / dt))), True

    def step(self, act: HybridAction):
        if self.done:
            raise EpisodeFinished("step() called on a finished episode")
        obs = self._build_obs()
        command, valid = self._command(act, obs)
        w = self.world
        stop_v = self.reward_cfg.stop_speed_threshold
        delta = EpisodeMetrics()
        for _ in range(self.config.control_step):
            if command is not None and self.crossed():
                command, self.target_speed = None, None
            w.advance(command)
            v = self.cav.speed
            delta.fuel += w.cav_fuel
            delta.co2 += w.cav_co2
            now_stopped = v <= stop_v
            if now_stopped:
                delta.wti += w.dt
                if not self._stopped:
                    delta.wco += 1
            self._stopped = now_stopped
            if self.record_trace:
                self._trace_row(act.gap_bit, act.accel_adv, self.metrics.fuel + delta.fuel)
            if w.cav_exited or self.elapsed >= self.config.horizon:
                self.done = True
                break
        self.metrics = self.metrics + delta
        R, parts = compute_reward(obs, act, delta.fuel, self.cav.speed, self.reward_cfg,
                                  self.config.control_step)
        info = {"metrics_delta": delta, "valid_advisory": valid, **parts}
        return self._build_obs(), R, self.done, info

    # -- trace export --------------------------------------------------
    def _trace_row(self, gap_bit: int, accel_adv: float, fuel_cum: float):
        p, _ = self.world.phase()
        self.trace.append({
            "t": self.elapsed, "position": self.cav.position, "speed": self.cav.speed,
            "accel": self.cav.accel, "phase": p, "fuel_cum": fuel_cum,
            "gap_bit": gap_bit, "accel_adv": float(accel_adv),
        })


def write_trace(rows, path, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k])
                         for k in TRACE_FIELDS})
