"""Discrete-time microscopic freeway simulation with managed-lane policies.

Lanes are indexed from the right: lane 0 is the rightmost, lane
``lane_count - 1`` the leftmost (managed) lane.  Each lane holds its vehicles
sorted by ascending position; ``position`` is the front bumper.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .channel import BroadcastRoster, ReceptionOutcome, reception_log_row, reception_trial, run_attempts
from .control import (
    ControllerParams,
    ControlMode,
    FallbackEvent,
    cacc_accel,
    fallback_step,
    infeasibility_check,
)
from .dsrc import DEFAULT_TABLE, CoefficientTable, DsrcParams, ReceptionDiagnostics

VEHICLE_LENGTH_M = 5.0


class InvariantViolation(RuntimeError):
    """A hard simulation invariant (collision, policy, conservation) was broken."""


class VehicleClass(enum.Enum):
    GP_HUMAN = "GP"
    HOV_HUMAN = "HOV"
    CACC = "CACC"


ALL_CLASSES = frozenset(VehicleClass)


class LanePolicy(enum.Enum):
    BASE = "BASE"
    UML = "UML"
    MML = "MML"
    DL = "DL"
    DLA = "DLA"

    @property
    def managed_lane_classes(self) -> frozenset[VehicleClass]:
        """Classes allowed in the leftmost lane."""
        return _MANAGED_ACCESS[self]

    @property
    def has_cacc_lane(self) -> bool:
        """True when the leftmost lane is reserved for (or shared by) CACC only."""
        return self in (LanePolicy.MML, LanePolicy.DL, LanePolicy.DLA)

    @property
    def access_controlled(self) -> bool:
        return self is LanePolicy.DLA


# leftmost lane; all other lanes are general purpose (every class)
_MANAGED_ACCESS = {
    LanePolicy.BASE: frozenset({VehicleClass.HOV_HUMAN}),
    LanePolicy.UML: ALL_CLASSES,
    LanePolicy.MML: frozenset({VehicleClass.CACC, VehicleClass.HOV_HUMAN}),
    LanePolicy.DL: frozenset({VehicleClass.CACC}),
    LanePolicy.DLA: frozenset({VehicleClass.CACC}),
}

DEFAULT_ACCESS_ZONES = ((2000.0, 2500.0), (5000.0, 5500.0))


@dataclass(frozen=True)
class RoadNetwork:
    length_m: float = 8000.0
    lane_count: int = 4
    policy: LanePolicy = LanePolicy.BASE
    access_zones: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError("length_m must be positive")
        if self.lane_count < 2:
            raise ValueError("need at least two lanes")
        zones = tuple(sorted((float(a), float(b)) for a, b in self.access_zones))
        if self.policy is LanePolicy.DLA and not zones:
            zones = DEFAULT_ACCESS_ZONES
        if zones and self.policy is not LanePolicy.DLA:
            raise ValueError("access zones are only meaningful for the DLA policy")
        prev_end = -math.inf
        for a, b in zones:
            if not 0 <= a < b <= self.length_m:
                raise ValueError(f"access zone ({a}, {b}) outside road [0, {self.length_m}]")
            if a < prev_end:
                raise ValueError("access zones overlap")
            prev_end = b
        object.__setattr__(self, "access_zones", zones)

    @property
    def managed_lane(self) -> int:
        return self.lane_count - 1

    def permits(self, lane: int, cls: VehicleClass) -> bool:
        if lane == self.managed_lane:
            return cls in self.policy.managed_lane_classes
        return 0 <= lane < self.lane_count

    def platoon_lanes(self) -> frozenset[int]:
        """Lanes where CACC operation is enabled (entries carrying a C)."""
        if self.policy is LanePolicy.UML:
            return frozenset(range(self.lane_count))
        if self.policy.has_cacc_lane:
            return frozenset({self.managed_lane})
        return frozenset()

    def in_access_zone(self, position: float) -> bool:
        return any(a <= position <= b for a, b in self.access_zones)

    def crossing_allowed(self, from_lane: int, to_lane: int, position: float) -> bool:
        """Zone rule: under access control, moves in or out of the managed lane
        only happen inside a designated zone."""
        if not self.policy.access_controlled:
            return True
        if self.managed_lane not in (from_lane, to_lane):
            return True
        return self.in_access_zone(position)


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 33.3
    time_headway: float = 1.1
    min_gap: float = 2.0
    accel_max: float = 1.5
    comfort_decel: float = 2.0
    exponent: int = 4
    # hard braking limit shared by every vehicle; also the guard's assumption
    emergency_decel: float = 9.0


def human_accel(gap_m: float | None, speed: float, lead_speed: float | None,
                params: IdmParams, desired_speed: float | None = None) -> float:
    """Intelligent Driver Model acceleration.

    ``gap_m`` is the bumper-to-bumper distance, ``None`` for no leader.  A
    non-positive gap returns the emergency deceleration.
    """
    v0 = params.desired_speed if desired_speed is None else desired_speed
    free = params.accel_max * (1.0 - (speed / v0) ** params.exponent)
    if gap_m is None:
        return max(-params.emergency_decel, free)
    if gap_m <= 0:
        return -params.emergency_decel
    dv = speed - lead_speed
    s_star = params.min_gap + max(
        0.0, speed * params.time_headway + speed * dv / (2.0 * math.sqrt(params.accel_max * params.comfort_decel))
    )
    a = free - params.accel_max * (s_star / gap_m) ** 2
    return max(-params.emergency_decel, a)


# Emergency braking guard.  With every vehicle's deceleration capped at b and
# semi-implicit Euler updates, the distance covered while braking to rest
# from speed v is D(v) = dt * sum_{n>=1} max(0, v - n*b*dt).  A follower is
# safe if x_f + D(v_f) <= x_l + D(v_l) - L - margin; the guard picks the
# largest next speed that keeps this true, which makes it inductive.

def braking_distance(v: float, b: float, dt: float) -> float:
    step = b * dt
    if v <= step:
        return 0.0
    m = int(v // step)
    return dt * (m * v - step * m * (m + 1) / 2.0)


def max_safe_speed(gap_m: float, lead_speed: float, b: float, dt: float, margin: float) -> float:
    """Largest next-step speed v' with v'*dt + D(v') <= gap + D(v_lead) - margin."""
    budget = gap_m + braking_distance(lead_speed, b, dt) - margin
    if budget < 0:
        return 0.0
    step = b * dt
    # v'*dt + D(v') == D(v' + b*dt); D(m*step) = b*dt^2*m*(m-1)/2
    unit = b * dt * dt
    m = int((1.0 + math.sqrt(1.0 + 8.0 * budget / unit)) / 2.0)
    while unit * m * (m + 1) / 2.0 <= budget:
        m += 1
    while m > 1 and unit * m * (m - 1) / 2.0 > budget:
        m -= 1
    u = (budget / dt + step * m * (m + 1) / 2.0) / m
    return max(0.0, u - step)


def state_safe(x_f: float, v_f: float, x_l: float, v_l: float, length: float,
               b: float, dt: float, margin: float) -> bool:
    return x_f + braking_distance(v_f, b, dt) <= x_l - length + braking_distance(v_l, b, dt) - margin


@dataclass(eq=False)
class Vehicle:
    id: int
    cls: VehicleClass
    lane: int
    position: float
    speed: float
    desired_speed: float
    accel: float = 0.0
    mode: ControlMode = ControlMode.HUMAN
    platoon_predecessor: int | None = None
    consecutive_successes: int = 0
    length: float = VEHICLE_LENGTH_M
    last_lane_change_s: float = -math.inf
    # set by a driver takeover; automation stays off for the rest of the trip
    disengaged: bool = False

    @property
    def broadcasting(self) -> bool:
        return self.mode.broadcasting


@dataclass(frozen=True)
class DemandSpec:
    volume_vph: float = 6000.0
    mpr: float = 0.0
    hov_fraction: float = 0.1
    desired_speed_mean: float = 33.3
    desired_speed_std: float = 2.0

    def __post_init__(self):
        if self.volume_vph < 0:
            raise ValueError("volume_vph must be non-negative")
        if not 0 <= self.mpr <= 1:
            raise ValueError("mpr must lie in [0, 1]")
        if not 0 <= self.hov_fraction <= 1:
            raise ValueError("hov_fraction must lie in [0, 1]")
        if self.desired_speed_mean <= 0 or self.desired_speed_std < 0:
            raise ValueError("bad desired speed distribution")

    @property
    def max_desired_speed(self) -> float:
        return self.desired_speed_mean + 2.5 * self.desired_speed_std

    def class_shares(self) -> dict[VehicleClass, float]:
        """CACC takes ``mpr``; of the rest, ``hov_fraction`` are HOV."""
        human = 1.0 - self.mpr
        return {
            VehicleClass.CACC: self.mpr,
            VehicleClass.HOV_HUMAN: human * self.hov_fraction,
            VehicleClass.GP_HUMAN: human * (1.0 - self.hov_fraction),
        }


@dataclass(frozen=True)
class LaneChangeParams:
    incentive: float = 0.2
    keep_right_bias: float = 0.1
    safe_decel: float = 4.0
    cooldown_s: float = 3.0


@dataclass(frozen=True)
class InjectedEvent:
    """Fallback event forced onto a vehicle at the first control step at or after
    ``time_s`` where ``selector`` matches.

    Selectors: ``id:<n>``, ``platooned`` (lowest-id CACC_PLATOONED vehicle),
    ``automated`` (lowest-id vehicle in an automated mode).
    """

    time_s: float
    selector: str
    event: FallbackEvent

    def __post_init__(self):
        s = self.selector
        if not (s in ("platooned", "automated") or (s.startswith("id:") and s[3:].isdigit())):
            raise ValueError(f"bad vehicle selector {s!r}")


@dataclass
class SimStats:
    spawned: int = 0
    retired: int = 0
    retired_after_warmup: int = 0
    trials: int = 0
    successes: int = 0
    attempts: int = 0
    attempts_hist: list[int] = field(default_factory=lambda: [0] * 6)
    probability_sum: float = 0.0
    xi_samples: list[float] = field(default_factory=list)
    transitions: dict[tuple[str, str, str], int] = field(default_factory=dict)
    guard_activations: int = 0
    lane_changes: int = 0
    max_queue: int = 0
    injected_applied: int = 0


# sinks receive plain tuples; column orders in the *_FIELDS constants
Sink = Callable[[tuple], None]

TRAJECTORY_FIELDS = ("time_s", "vehicle_id", "lane", "position_m", "speed_mps", "mode")


class Freeway:
    """One replication's world state, advanced with :meth:`step`."""

    def __init__(
        self,
        road: RoadNetwork,
        demand: DemandSpec,
        rng: np.random.Generator | int,
        *,
        dt: float = 0.5,
        control_every: int = 5,
        warmup_s: float = 0.0,
        controller: ControllerParams = ControllerParams(),
        idm: IdmParams = IdmParams(),
        lane_change: LaneChangeParams = LaneChangeParams(),
        dsrc: DsrcParams = DsrcParams(),
        table: CoefficientTable = DEFAULT_TABLE,
        forced_probability: float | None = None,
        injected_events: Iterable[InjectedEvent] = (),
        safety_margin_m: float = 1.0,
        reception_sink: Sink | None = None,
        fallback_sink: Sink | None = None,
        trajectory_sink: Sink | None = None,
    ):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if control_every < 1:
            raise ValueError("control_every must be >= 1")
        self.road = road
        self.demand = demand
        self.dt = dt
        self.control_every = control_every
        self.warmup_s = warmup_s
        self.controller = controller
        self.idm = idm
        self.lc = lane_change
        self.dsrc = dsrc
        self.table = table
        self.forced_probability = forced_probability
        self.margin = safety_margin_m
        self.reception_sink = reception_sink
        self.fallback_sink = fallback_sink
        self.trajectory_sink = trajectory_sink

        if isinstance(rng, np.random.Generator):
            self.traffic_rng = rng
            self.channel_rng = np.random.default_rng(rng.integers(2**63))
        else:
            traffic_ss, channel_ss = np.random.SeedSequence(rng).spawn(2)
            self.traffic_rng = np.random.default_rng(traffic_ss)
            self.channel_rng = np.random.default_rng(channel_ss)

        self.lanes: list[list[Vehicle]] = [[] for _ in range(road.lane_count)]
        self.by_id: dict[int, Vehicle] = {}
        self.queue: deque[Vehicle] = deque()
        self.pending_events: list[InjectedEvent] = sorted(injected_events, key=lambda e: e.time_s)
        self.platoon_lanes = road.platoon_lanes()
        self.next_id = 0
        self.step_index = 0
        self.stats = SimStats()
        self.diag = ReceptionDiagnostics()
        self.speed_cap = 1.2 * max(demand.max_desired_speed, idm.desired_speed)

    # -- bookkeeping ------------------------------------------------------

    @property
    def time_s(self) -> float:
        return self.step_index * self.dt

    def vehicles(self) -> list[Vehicle]:
        return sorted(self.by_id.values(), key=lambda v: v.id)

    def on_network(self) -> int:
        return len(self.by_id)

    def add_vehicle(self, v: Vehicle) -> Vehicle:
        """Place a vehicle directly (scenario setup and tests)."""
        if not self.road.permits(v.lane, v.cls):
            raise InvariantViolation(f"vehicle {v.id} ({v.cls.value}) barred from lane {v.lane}")
        lane = self.lanes[v.lane]
        lane.insert(bisect_left(lane, v.position, key=_pos), v)
        self.by_id[v.id] = v
        self.next_id = max(self.next_id, v.id + 1)
        self.stats.spawned += 1
        return v

    def leader_of(self, v: Vehicle) -> Vehicle | None:
        lane = self.lanes[v.lane]
        i = lane.index(v)
        return lane[i + 1] if i + 1 < len(lane) else None

    def _log_transition(self, v: Vehicle, old: ControlMode, event: str, new: ControlMode) -> None:
        t = self.time_s
        if t >= self.warmup_s:
            key = (old.value, event, new.value)
            self.stats.transitions[key] = self.stats.transitions.get(key, 0) + 1
        if self.fallback_sink is not None:
            self.fallback_sink((t, v.id, old.value, event, new.value))

    def _set_mode(self, v: Vehicle, new: ControlMode, event: str) -> None:
        old = v.mode
        if new is old:
            return
        v.mode = new
        if new is ControlMode.HUMAN:
            v.platoon_predecessor = None
            v.consecutive_successes = 0
            v.disengaged = True
        self._log_transition(v, old, event, new)

    # -- main loop --------------------------------------------------------

    def step(self) -> None:
        t = self.time_s
        if self.step_index % self.control_every == 0:
            self._control_update(t)
        self._move()
        self._retire()
        self._lane_changes(t)
        self._update_platoon_links()
        self._spawn()
        self.check_invariants()
        if self.trajectory_sink is not None:
            for v in self.vehicles():
                self.trajectory_sink((self.time_s + self.dt, v.id, v.lane, v.position, v.speed, v.mode.value))
        self.step_index += 1

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.step()

    # -- communication and fallback ---------------------------------------

    def roster(self) -> BroadcastRoster:
        return BroadcastRoster.build(
            [(v.position, v.id) for v in self.by_id.values() if v.mode.broadcasting]
        )

    def _take_injected(self, t: float) -> dict[int, FallbackEvent]:
        out: dict[int, FallbackEvent] = {}
        keep = []
        for ev in self.pending_events:
            target = self._resolve(ev.selector, exclude=out) if ev.time_s <= t else None
            if target is None:
                keep.append(ev)
            else:
                out[target.id] = ev.event
                self.stats.injected_applied += 1
        self.pending_events = keep
        return out

    def _resolve(self, selector: str, exclude: dict[int, FallbackEvent]) -> Vehicle | None:
        if selector.startswith("id:"):
            v = self.by_id.get(int(selector[3:]))
            return v if v is not None and v.id not in exclude else None
        want_platooned = selector == "platooned"
        for v in self.vehicles():
            if v.id in exclude:
                continue
            if (v.mode is ControlMode.CACC_PLATOONED) if want_platooned else v.mode.automated:
                return v
        return None

    def _control_update(self, t: float) -> None:
        roster = self.roster()
        injected = self._take_injected(t)
        record = t >= self.warmup_s
        st = self.stats
        for v in self.vehicles():
            event = injected.get(v.id)
            if v.cls is not VehicleClass.CACC or not v.mode.automated:
                if event is not None:
                    self._set_mode(v, fallback_step(v.mode, event, v.consecutive_successes, self.controller), event.value)
                continue
            pred = self.by_id.get(v.platoon_predecessor) if v.platoon_predecessor is not None else None
            if event is None and pred is not None:
                x = pred.position - v.position
                out = self._trial(v, x, roster)
                if out.success:
                    v.consecutive_successes += 1
                else:
                    v.consecutive_successes = 0
                    event = FallbackEvent.PACKET_DROP
                if record:
                    st.trials += 1
                    st.successes += out.success
                    st.attempts += out.attempts_used
                    st.attempts_hist[out.attempts_used] += 1
                    st.probability_sum += out.probability_used
                    st.xi_samples.append(out.xi)
                if self.reception_sink is not None:
                    self.reception_sink(reception_log_row(t, v.id, x, out))
            if event is None and pred is not None and v.mode is ControlMode.CACC_PLATOONED:
                gap = pred.position - pred.length - v.position
                event = infeasibility_check(gap, v.speed, pred.speed, self.controller)
                if event is not None:
                    v.consecutive_successes = 0
            new = fallback_step(v.mode, event, v.consecutive_successes, self.controller)
            self._set_mode(v, new, event.value if event is not None else "REJOIN")

    def _trial(self, v: Vehicle, x: float, roster: BroadcastRoster) -> ReceptionOutcome:
        if self.forced_probability is not None:
            p = self.forced_probability
            return run_attempts(lambda: p, self.channel_rng)
        return reception_trial(
            x, roster, self.table, self.dsrc, self.channel_rng,
            receiver_pos_m=v.position, receiver_id=v.id, diag=self.diag,
        )

    # -- longitudinal motion ----------------------------------------------

    def _accel(self, v: Vehicle, leader: Vehicle | None) -> float:
        if leader is None:
            gap = lead_speed = None
        else:
            gap = leader.position - leader.length - v.position
            lead_speed = leader.speed
        headway = self.controller.headway_for(v.mode)
        if headway is None:
            a = human_accel(gap, v.speed, lead_speed, self.idm, v.desired_speed)
        else:
            a = cacc_accel(max(gap, 0.0) if gap is not None else None, v.speed, lead_speed,
                           headway, self.controller, v.desired_speed)
        if leader is not None:
            b = self.idm.emergency_decel
            v_safe = max_safe_speed(gap, leader.speed, b, self.dt, self.margin)
            a_safe = (v_safe - v.speed) / self.dt
            if a_safe < a:
                a = a_safe
                self.stats.guard_activations += 1
        return max(-self.idm.emergency_decel, a)

    def _move(self) -> None:
        dt = self.dt
        for lane in self.lanes:
            n = len(lane)
            accels = [self._accel(v, lane[i + 1] if i + 1 < n else None) for i, v in enumerate(lane)]
            for v, a in zip(lane, accels):
                v.accel = a
                v.speed = max(0.0, v.speed + a * dt)
                v.position += v.speed * dt

    def _retire(self) -> None:
        end = self.road.length_m
        after = self.time_s + self.dt >= self.warmup_s
        for lane in self.lanes:
            while lane and lane[-1].position > end:
                v = lane.pop()
                del self.by_id[v.id]
                self.stats.retired += 1
                self.stats.retired_after_warmup += after

    # -- lateral moves ----------------------------------------------------

    def _neighbours(self, lane_idx: int, position: float) -> tuple[Vehicle | None, Vehicle | None]:
        """(follower, leader) around ``position`` in a lane."""
        lane = self.lanes[lane_idx]
        i = bisect_left(lane, position, key=_pos)
        follower = lane[i - 1] if i > 0 else None
        leader = lane[i] if i < len(lane) else None
        return follower, leader

    def _gap_ok(self, follower: Vehicle | None, leader: Vehicle | None, f_pos: float, f_speed: float) -> bool:
        if leader is None:
            return True
        b, dt = self.idm.emergency_decel, self.dt
        gap = leader.position - leader.length - f_pos
        if gap < self.idm.min_gap:
            return False
        return state_safe(f_pos, f_speed, leader.position, leader.speed, leader.length, b, dt, self.margin)

    def lane_change_decision(self, v: Vehicle) -> int | None:
        """Adjacent target lane for ``v`` this step, or ``None``."""
        road = self.road
        if v.mode.automated:
            return None
        if self.time_s - v.last_lane_change_s < self.lc.cooldown_s:
            return None
        cur_leader = self.leader_of(v)
        cacc_pull = v.cls is VehicleClass.CACC and road.policy.has_cacc_lane
        if cacc_pull and v.lane == road.managed_lane:
            return None
        a_now = self._human_accel_behind(v, cur_leader)
        recommend = v.cls is VehicleClass.CACC and road.policy is LanePolicy.UML
        if not (cacc_pull or recommend):
            # no lane can beat the free-road acceleration
            best_possible = human_accel(None, v.speed, None, self.idm, v.desired_speed)
            if best_possible - a_now <= self.lc.incentive - self.lc.keep_right_bias:
                return None
        candidates = []
        for target in (v.lane + 1, v.lane - 1):
            if not 0 <= target < road.lane_count:
                continue
            if not road.permits(target, v.cls):
                continue
            if not road.crossing_allowed(v.lane, target, v.position):
                continue
            follower, leader = self._neighbours(target, v.position)
            if leader is not None and leader.position - leader.length <= v.position:
                continue
            if follower is not None and follower.position >= v.position - v.length:
                continue
            if not self._gap_ok(follower, leader, v.position, v.speed):
                continue
            if follower is not None and not self._gap_ok(None, v, follower.position, follower.speed):
                continue
            if follower is not None:
                fgap = v.position - v.length - follower.position
                if self._follower_accel(follower, fgap, v.speed) < -self.lc.safe_decel:
                    continue
            candidates.append((target, leader))
        if not candidates:
            return None
        if cacc_pull:
            for target, _ in candidates:
                if target > v.lane:
                    return target
            return None
        if recommend:
            # platoon recommendation: join a CACC leader next door
            for target, leader in candidates:
                if target in self.platoon_lanes and leader is not None and leader.cls is VehicleClass.CACC:
                    gap = leader.position - leader.length - v.position
                    limit = self.controller.confirm_gap_factor * self.controller.desired_gap(
                        v.speed, self.controller.short_headway_s)
                    if gap <= limit:
                        return target
        best, best_gain = None, 0.0
        for target, leader in candidates:
            gain = self._human_accel_behind(v, leader) - a_now
            threshold = self.lc.incentive + (self.lc.keep_right_bias if target > v.lane else -self.lc.keep_right_bias)
            if gain > threshold and gain > best_gain:
                best, best_gain = target, gain
        return best

    def _human_accel_behind(self, v: Vehicle, leader: Vehicle | None) -> float:
        if leader is None:
            return human_accel(None, v.speed, None, self.idm, v.desired_speed)
        gap = leader.position - leader.length - v.position
        return human_accel(gap, v.speed, leader.speed, self.idm, v.desired_speed)

    def _follower_accel(self, follower: Vehicle, gap: float, lead_speed: float) -> float:
        headway = self.controller.headway_for(follower.mode)
        if headway is None:
            return human_accel(gap, follower.speed, lead_speed, self.idm, follower.desired_speed)
        return cacc_accel(max(gap, 0.0), follower.speed, lead_speed, headway, self.controller,
                          follower.desired_speed)

    def _lane_changes(self, t: float) -> None:
        for v in self.vehicles():
            target = self.lane_change_decision(v)
            if target is None:
                continue
            src = self.lanes[v.lane]
            src.remove(v)
            dst = self.lanes[target]
            dst.insert(bisect_left(dst, v.position, key=_pos), v)
            v.lane = target
            v.last_lane_change_s = t
            self.stats.lane_changes += 1

    # -- platoon formation ------------------------------------------------

    def _update_platoon_links(self) -> None:
        ctrl = self.controller
        for lane_idx, lane in enumerate(self.lanes):
            eligible = lane_idx in self.platoon_lanes
            n = len(lane)
            for i, v in enumerate(lane):
                if v.cls is not VehicleClass.CACC:
                    continue
                leader = lane[i + 1] if i + 1 < n else None
                if v.platoon_predecessor is not None:
                    if not (eligible and leader is not None and leader.id == v.platoon_predecessor
                            and leader.mode.automated):
                        v.platoon_predecessor = None
                        v.consecutive_successes = 0
                        if v.mode is ControlMode.CACC_PLATOONED:
                            self._set_mode(v, ControlMode.ACC_FALLBACK, "LINK_LOST")
                if (not eligible or v.disengaged or v.platoon_predecessor is not None or leader is None
                        or leader.cls is not VehicleClass.CACC or leader.disengaged):
                    continue
                gap = leader.position - leader.length - v.position
                if gap > ctrl.confirm_gap_factor * ctrl.desired_gap(v.speed, ctrl.short_headway_s):
                    continue
                v.platoon_predecessor = leader.id
                v.consecutive_successes = 0
                if v.mode is ControlMode.HUMAN:
                    self._set_mode(v, ControlMode.ACC_FALLBACK, "CONFIRMATION")
                if leader.mode is ControlMode.HUMAN:
                    self._set_mode(leader, ControlMode.ACC_FALLBACK, "CONFIRMATION")

    # -- demand -----------------------------------------------------------

    def new_arrivals(self) -> list[Vehicle]:
        """Poisson arrivals for one step, classes and desired speeds drawn."""
        rng = self.traffic_rng
        d = self.demand
        n = rng.poisson(d.volume_vph / 3600.0 * self.dt) if d.volume_vph > 0 else 0
        out = []
        shares = d.class_shares()
        for _ in range(n):
            u = rng.random()
            if u < shares[VehicleClass.CACC]:
                cls = VehicleClass.CACC
            elif u < shares[VehicleClass.CACC] + shares[VehicleClass.HOV_HUMAN]:
                cls = VehicleClass.HOV_HUMAN
            else:
                cls = VehicleClass.GP_HUMAN
            lo = d.desired_speed_mean - 2.5 * d.desired_speed_std
            v0 = float(np.clip(rng.normal(d.desired_speed_mean, d.desired_speed_std),
                               lo, d.max_desired_speed))
            out.append(Vehicle(self.next_id, cls, -1, 0.0, 0.0, v0))
            self.next_id += 1
        return out

    def _insertion(self, v: Vehicle) -> tuple[int, float] | None:
        road = self.road
        options = []
        for lane_idx in range(road.lane_count):
            if not road.permits(lane_idx, v.cls) or not road.crossing_allowed(-1, lane_idx, 0.0):
                continue
            lane = self.lanes[lane_idx]
            if not lane:
                options.append((0, lane_idx, v.desired_speed))
                continue
            last = lane[0]
            gap = last.position - last.length
            if gap < self.idm.min_gap:
                continue
            speed = min(v.desired_speed, last.speed,
                        (gap - self.idm.min_gap) / self.idm.time_headway,
                        max_safe_speed(gap, last.speed, self.idm.emergency_decel, self.dt, self.margin))
            if speed < 0.6 * min(v.desired_speed, last.speed):
                continue
            options.append((len(lane), lane_idx, speed))
        if not options:
            return None
        _, lane_idx, speed = min(options)
        return lane_idx, speed

    def _spawn(self) -> None:
        self.queue.extend(self.new_arrivals())
        while self.queue:
            v = self.queue[0]
            slot = self._insertion(v)
            if slot is None:
                break
            self.queue.popleft()
            v.lane, v.speed = slot
            v.position = 0.0
            self.lanes[v.lane].insert(0, v)
            self.by_id[v.id] = v
            self.stats.spawned += 1
        self.stats.max_queue = max(self.stats.max_queue, len(self.queue))

    # -- invariants -------------------------------------------------------

    def check_invariants(self) -> None:
        t = self.time_s + self.dt
        count = 0
        for lane_idx, lane in enumerate(self.lanes):
            count += len(lane)
            prev = None
            for v in lane:
                if v.lane != lane_idx:
                    raise InvariantViolation(f"t={t}: vehicle {v.id} lane bookkeeping broken")
                if not self.road.permits(lane_idx, v.cls):
                    raise InvariantViolation(f"t={t}: vehicle {v.id} ({v.cls.value}) in barred lane {lane_idx}")
                if not 0.0 <= v.speed <= self.speed_cap:
                    raise InvariantViolation(f"t={t}: vehicle {v.id} speed {v.speed} out of range")
                if not 0.0 <= v.position <= self.road.length_m:
                    raise InvariantViolation(f"t={t}: vehicle {v.id} position {v.position} off road")
                if v.mode.broadcasting != (v.mode is ControlMode.CACC_PLATOONED):
                    raise InvariantViolation("broadcast flag inconsistent")
                if prev is not None and v.position - v.length - prev.position <= 0.0:
                    raise InvariantViolation(
                        f"t={t}: collision in lane {lane_idx} between {prev.id} and {v.id}")
                prev = v
        if count != len(self.by_id):
            raise InvariantViolation(f"t={t}: vehicle index out of sync")
        if self.stats.spawned != self.stats.retired + count:
            raise InvariantViolation(f"t={t}: vehicle conservation broken")


def _pos(v: Vehicle) -> float:
    return v.position
