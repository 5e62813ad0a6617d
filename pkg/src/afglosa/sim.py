"""Single-intersection microscopic traffic world.

Vehicles drive single-file in independent lanes along one route. Human-driven
vehicles (HDVs) follow the Intelligent Driver Model; the signal runs a fixed
green/red cycle with no yellow phase. Positions are front-bumper coordinates
measured from the route origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

GREEN = 0
RED = 1


class SimulationError(RuntimeError):
    """Raised when the world reaches a physically inconsistent state."""


@dataclass(frozen=True)
class VehicleClass:
    name: str
    accel_max: float
    decel_max: float
    length: float = 5.0
    min_gap: float = 2.0
    spawn_probability: float = 0.0

    def __post_init__(self):
        if self.accel_max <= 0 or self.decel_max <= 0:
            raise ValueError(f"{self.name}: accel_max and decel_max must be positive")
        if self.length <= 0 or self.min_gap < 0:
            raise ValueError(f"{self.name}: bad length/min_gap")
        if not 0.0 <= self.spawn_probability <= 1.0:
            raise ValueError(f"{self.name}: spawn_probability outside [0, 1]")


HDV_CLASSES = (
    VehicleClass("A", 6.0, 6.0, 5.0, 2.0, 0.1),
    VehicleClass("B", 5.0, 4.5, 5.0, 2.0, 0.2),
    VehicleClass("C", 3.0, 5.0, 5.0, 2.0, 0.3),
    VehicleClass("D", 3.0, 3.0, 5.0, 2.0, 0.3),
    VehicleClass("F", 2.0, 1.5, 5.0, 2.0, 0.1),
)

CAV_CLASS = VehicleClass("CAV", 3.0, 3.0, 5.0, 2.0, 0.0)


@dataclass(frozen=True)
class RoadConfig:
    route_length: float = 994.9
    stop_line_position: float = 600.0
    speed_limit: float = 11.0
    lanes: int = 3
    detector_length: float = 300.0
    guidance_zone_length: float = 240.0

    def __post_init__(self):
        if not 0 < self.guidance_zone_length <= self.stop_line_position < self.route_length:
            raise ValueError("need 0 < guidance_zone_length <= stop_line_position < route_length")
        if self.detector_length <= 0:
            raise ValueError("detector_length must be positive")
        if self.lanes < 1 or self.speed_limit <= 0:
            raise ValueError("lanes and speed_limit must be positive")


@dataclass(frozen=True)
class SignalController:
    green_duration: float = 20.0
    red_duration: float = 20.0
    initial_offset: float = 0.0

    @property
    def cycle(self) -> float:
        return self.green_duration + self.red_duration

    def phase(self, t: float) -> tuple[int, float]:
        return signal_phase(t, self)


def signal_phase(t: float, sig: SignalController) -> tuple[int, float]:
    """Return ``(phase, remaining)`` where phase is ``GREEN`` or ``RED``.

    ``remaining`` is the time until the next phase boundary and lies in
    ``(0, phase_duration]``.
    """
    tau = math.fmod(t + sig.initial_offset, sig.cycle)
    if tau < 0:
        tau += sig.cycle
    if tau < sig.green_duration:
        return GREEN, sig.green_duration - tau
    return RED, sig.cycle - tau


@dataclass(frozen=True)
class IDMParams:
    delta: float = 4.0
    time_headway: float = 1.0


def idm_accel(v, v0, accel_max, decel_max, min_gap, gap=None, leader_speed=0.0,
              delta=4.0, time_headway=1.0):
    """Intelligent Driver Model acceleration, clipped to the vehicle limits.

    ``gap`` is the bumper-to-bumper distance to the leader (``None`` for a free
    road). ``decel_max`` doubles as the comfortable deceleration ``b``.
    """
    free = 1.0 - (v / v0) ** delta
    if gap is None:
        acc = accel_max * free
    elif gap <= 0.0:
        acc = -decel_max
    else:
        dv = v - leader_speed
        s_star = min_gap + max(0.0, v * time_headway + v * dv / (2.0 * math.sqrt(accel_max * decel_max)))
        acc = accel_max * (free - (s_star / gap) ** 2)
    if acc > accel_max:
        return accel_max
    if acc < -decel_max:
        return -decel_max
    return acc


def kinematic_step(v: float, a: float, dt: float, v_cap: float) -> tuple[float, float]:
    """Advance speed under constant acceleration; trapezoidal displacement."""
    v_next = min(max(v + a * dt, 0.0), v_cap)
    return v_next, 0.5 * (v + v_next) * dt


@dataclass(frozen=True)
class EmissionModel:
    """Instantaneous fuel-rate polynomial with an idle floor.

    Rates are in mg/s; ``co2_per_fuel`` is a mass ratio.
    """
    idle_rate: float = 250.0
    c1: float = 45.0
    c2: float = 0.0
    c3: float = 0.22
    c4: float = 60.0
    c5: float = 10.0
    co2_per_fuel: float = 3.135

    def __post_init__(self):
        if self.idle_rate < 0:
            raise ValueError("idle_rate must be non-negative")
        if self.co2_per_fuel <= 0:
            raise ValueError("co2_per_fuel must be positive")

    def step(self, v: float, a: float, dt: float) -> tuple[float, float]:
        return emission_step(v, a, dt, self)


def emission_step(v: float, a: float, dt: float, em: EmissionModel) -> tuple[float, float]:
    ap = a if a > 0.0 else 0.0
    rate = em.c1 * v + em.c2 * v * v + em.c3 * v ** 3 + em.c4 * ap * v + em.c5 * ap * ap * v
    fuel = dt * max(em.idle_rate, rate)
    return fuel, em.co2_per_fuel * fuel


class Vehicle:
    __slots__ = ("id", "vclass", "lane", "position", "speed", "accel", "is_cav", "stopping_for_red")

    def __init__(self, id, vclass, lane, position, speed, accel=0.0, is_cav=False):
        self.id = id
        self.vclass = vclass
        self.lane = lane
        self.position = position
        self.speed = speed
        self.accel = accel
        self.is_cav = is_cav
        self.stopping_for_red = False

    @property
    def rear(self) -> float:
        return self.position - self.vclass.length

    def __repr__(self):
        return (f"Vehicle(id={self.id}, class={self.vclass.name}, lane={self.lane}, "
                f"x={self.position:.2f}, v={self.speed:.2f}, a={self.accel:.2f})")


def idm_acceleration(ego: Vehicle, leader, road: RoadConfig, idm: IDMParams = IDMParams()) -> float:
    """IDM acceleration of ``ego`` against a leading vehicle, a stop-line
    obstacle position (a float, zero length, stationary) or ``None``."""
    c = ego.vclass
    if leader is None:
        gap, lv = None, 0.0
    elif isinstance(leader, Vehicle):
        gap, lv = leader.rear - ego.position, leader.speed
    else:
        gap, lv = float(leader) - ego.position, 0.0
    if gap is not None and gap < 0:
        raise SimulationError(f"overlap: {ego!r} is {-gap:.3f} m into its leader")
    return idm_accel(ego.speed, road.speed_limit, c.accel_max, c.decel_max, c.min_gap,
                     gap, lv, idm.delta, idm.time_headway)


def safe_speed(veh: Vehicle, leader: Vehicle, dt: float) -> float:
    """Largest next speed from which ``veh`` can still stop behind ``leader``
    if the leader brakes at its own maximum from now on.

    ``leader`` must already hold its post-tick state. The ``b*dt**2/8`` term
    covers the extra distance of a discrete-time stop over the continuous one.
    """
    b = veh.vclass.decel_max
    room = (leader.rear - veh.position - 0.5 * veh.speed * dt
            + leader.speed ** 2 / (2.0 * leader.vclass.decel_max) - b * dt * dt / 8.0)
    if room <= 0.0:
        return 0.0
    return 0.5 * (-b * dt + math.sqrt(b * b * dt * dt + 8.0 * b * room))


def draw_class(u: float, classes=HDV_CLASSES) -> VehicleClass:
    acc = 0.0
    for c in classes:
        acc += c.spawn_probability
        if u < acc:
            return c
    return classes[-1]


@dataclass
class World:
    """Mutable traffic state. Advance only through :meth:`advance`."""
    road: RoadConfig
    signal: SignalController
    flow: float
    rng: np.random.Generator
    classes: tuple = HDV_CLASSES
    emission: EmissionModel = field(default_factory=EmissionModel)
    idm: IDMParams = field(default_factory=IDMParams)
    dt: float = 1.0
    t: float = 0.0
    spawned: int = 0
    exited: int = 0
    cav: Optional[Vehicle] = None
    cav_exited: bool = False
    cav_fuel: float = 0.0
    cav_co2: float = 0.0

    def __post_init__(self):
        if self.flow < 0:
            raise ValueError("flow must be non-negative")
        total = sum(c.spawn_probability for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"class spawn probabilities sum to {total}, expected 1")
        # lanes[k] ordered front (largest position) to back
        self.lanes: list[list[Vehicle]] = [[] for _ in range(self.road.lanes)]
        self._next_id = 1

    # -- queries -------------------------------------------------------
    def phase(self) -> tuple[int, float]:
        return signal_phase(self.t, self.signal)

    def vehicles(self):
        for lane in self.lanes:
            yield from lane

    @property
    def n_active(self) -> int:
        return sum(len(lane) for lane in self.lanes)

    def leader_of(self, veh: Vehicle) -> Optional[Vehicle]:
        lane = self.lanes[veh.lane]
        i = lane.index(veh)
        return lane[i - 1] if i > 0 else None

    def gaps(self) -> list[float]:
        out = []
        for lane in self.lanes:
            for lead, fol in zip(lane, lane[1:]):
                out.append(lead.rear - fol.position)
        return out

    # -- spawning ------------------------------------------------------
    def _entry_speed(self, lane: list[Vehicle], vclass: VehicleClass) -> Optional[float]:
        """Speed for a vehicle entering at position 0, or None if blocked."""
        if not lane:
            return self.road.speed_limit
        last = lane[-1]
        gap = last.rear
        if gap < vclass.min_gap:
            return None
        # stoppable behind the last vehicle even if it brakes at its maximum
        b = vclass.decel_max
        room = gap - vclass.min_gap + last.speed ** 2 / (2.0 * last.vclass.decel_max) - b / 8.0
        v = math.sqrt(2.0 * b * room) if room > 0 else 0.0
        return min(v, self.road.speed_limit)

    def spawn_hdvs(self) -> list[Vehicle]:
        """One tick of the Bernoulli spawner. Random draws are made for every
        lane on every tick so the stream does not depend on traffic state."""
        p = self.flow * self.dt / (3600.0 * self.road.lanes)
        new = []
        for k, lane in enumerate(self.lanes):
            u_spawn, u_class = self.rng.random(2)
            if u_spawn >= p:
                continue
            vclass = draw_class(u_class, self.classes)
            v = self._entry_speed(lane, vclass)
            if v is None:
                continue
            veh = Vehicle(self._next_id, vclass, k, 0.0, v)
            self._next_id += 1
            lane.append(veh)
            self.spawned += 1
            new.append(veh)
        return new

    def insert_cav(self, speed: Optional[float] = None) -> bool:
        """Place the controlled vehicle at the origin of the middle lane."""
        k = self.road.lanes // 2
        lane = self.lanes[k]
        v = self._entry_speed(lane, CAV_CLASS)
        if v is None:
            return False
        if speed is not None:
            v = min(v, speed)
        self.cav = Vehicle(0, CAV_CLASS, k, 0.0, v, is_cav=True)
        lane.append(self.cav)
        self.spawned += 1
        return True

    # -- dynamics ------------------------------------------------------
    def _red_obstacle(self, veh: Vehicle, phase: int) -> Optional[float]:
        sl = self.road.stop_line_position
        if phase != RED or veh.position > sl:
            veh.stopping_for_red = False
            return None
        if not veh.stopping_for_red:
            # commit to stopping only when a stop before the line is feasible
            if veh.speed * veh.speed <= 2.0 * veh.vclass.decel_max * (sl - veh.position):
                veh.stopping_for_red = True
        return sl if veh.stopping_for_red else None

    def safe_accel(self, veh: Vehicle, leader: Optional[Vehicle], phase: int) -> float:
        """IDM acceleration against the nearer of the physical leader and the
        red-light virtual obstacle."""
        c = veh.vclass
        gap, lv = None, 0.0
        if leader is not None:
            gap, lv = leader.rear - veh.position, leader.speed
        obs = self._red_obstacle(veh, phase)
        if obs is not None and (gap is None or obs - veh.position < gap):
            gap, lv = obs - veh.position, 0.0
        if gap is not None and gap < 0:
            raise SimulationError(f"t={self.t}: overlap {gap:.3f} m at {veh!r}")
        return idm_accel(veh.speed, self.road.speed_limit, c.accel_max, c.decel_max, c.min_gap,
                         gap, lv, self.idm.delta, self.idm.time_headway)

    def advance(self, cav_command: Optional[Callable[[Vehicle, float], float]] = None) -> None:
        """Advance one tick of ``dt`` seconds.

        ``cav_command(cav, idm_acc)`` returns the acceleration applied to the
        controlled vehicle; it must not exceed ``idm_acc`` (the safety cap).
        Lanes update front to back so each follower sees its leader's new state.
        """
        phase, _ = self.phase()
        dt = self.dt
        for lane in self.lanes:
            leader = None
            for veh in lane:
                acc = self.safe_accel(veh, leader, phase)
                if veh.is_cav and cav_command is not None:
                    acc = min(cav_command(veh, acc), acc)
                    acc = max(acc, -veh.vclass.decel_max)
                v_old = veh.speed
                v_new, dx = kinematic_step(v_old, acc, dt, self.road.speed_limit)
                if leader is not None:
                    v_cap = safe_speed(veh, leader, dt)
                    if v_new > v_cap:
                        v_new = max(v_cap, v_old - veh.vclass.decel_max * dt, 0.0)
                        dx = 0.5 * (v_old + v_new) * dt
                veh.position += dx
                veh.accel = (v_new - v_old) / dt
                veh.speed = v_new
                if veh.is_cav:
                    f, c = emission_step(0.5 * (v_old + v_new), veh.accel, dt, self.emission)
                    self.cav_fuel, self.cav_co2 = f, c
                leader = veh
        self.t += dt
        self._remove_exited()
        self._check_gaps()
        self.spawn_hdvs()

    def _remove_exited(self):
        for lane in self.lanes:
            while lane and lane[0].position > self.road.route_length:
                veh = lane.pop(0)
                self.exited += 1
                if veh.is_cav:
                    self.cav_exited = True

    def _check_gaps(self):
        for lane in self.lanes:
            for lead, fol in zip(lane, lane[1:]):
                if lead.rear - fol.position < -1e-9:
                    raise SimulationError(
                        f"t={self.t}: collision, {fol!r} overlaps {lead!r}")
