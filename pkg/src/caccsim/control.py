"""CACC longitudinal control and the platoon fallback state machine."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class ControlMode(enum.Enum):
    HUMAN = "HUMAN"
    ACC_FALLBACK = "ACC_FALLBACK"
    CACC_PLATOONED = "CACC_PLATOONED"

    @property
    def broadcasting(self) -> bool:
        return self is ControlMode.CACC_PLATOONED

    @property
    def automated(self) -> bool:
        return self is not ControlMode.HUMAN


class FallbackEvent(enum.Enum):
    PACKET_DROP = "PACKET_DROP"
    INFEASIBLE_SOLUTION = "INFEASIBLE_SOLUTION"
    ODD_EXIT = "ODD_EXIT"
    ADS_FAILURE = "ADS_FAILURE"


@dataclass(frozen=True)
class ControllerParams:
    short_headway_s: float = 0.6
    long_headway_s: float = 1.5
    standstill_gap_m: float = 2.0
    accel_max: float = 2.0
    decel_max: float = 4.0
    speed_gain: float = 0.07
    gap_gain: float = 0.23
    rejoin_threshold: int = 10
    # cruise toward desired speed when no leader is in range
    cruise_gain: float = 0.4
    # demanded decel beyond infeasible_factor * decel_max counts as no solution
    infeasible_factor: float = 1.5
    # platoon confirmation distance, in multiples of the short-headway gap
    confirm_gap_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.short_headway_s < self.long_headway_s:
            raise ValueError("need 0 < short_headway_s < long_headway_s")
        if self.accel_max <= 0 or self.decel_max <= 0:
            raise ValueError("accel_max and decel_max must be positive")
        if self.rejoin_threshold < 1:
            raise ValueError("rejoin_threshold must be >= 1")
        if self.standstill_gap_m < 0:
            raise ValueError("standstill_gap_m must be non-negative")
        if self.infeasible_factor < 1:
            raise ValueError("infeasible_factor must be >= 1")

    def headway_for(self, mode: ControlMode) -> float | None:
        if mode is ControlMode.CACC_PLATOONED:
            return self.short_headway_s
        if mode is ControlMode.ACC_FALLBACK:
            return self.long_headway_s
        return None

    def desired_gap(self, speed: float, headway_s: float) -> float:
        return self.standstill_gap_m + headway_s * speed


def fallback_step(
    mode: ControlMode,
    event: FallbackEvent | None,
    consecutive_successes: int,
    params: ControllerParams,
) -> ControlMode:
    """Advance the fallback state machine by one control step."""
    if consecutive_successes < 0:
        raise ValueError("consecutive_successes must be non-negative")
    if event is FallbackEvent.ADS_FAILURE:
        return ControlMode.HUMAN
    if event is FallbackEvent.ODD_EXIT:
        return ControlMode.HUMAN
    if mode is ControlMode.CACC_PLATOONED and event in (
        FallbackEvent.PACKET_DROP, FallbackEvent.INFEASIBLE_SOLUTION
    ):
        return ControlMode.ACC_FALLBACK
    if (
        mode is ControlMode.ACC_FALLBACK
        and event is None
        and consecutive_successes >= params.rejoin_threshold
    ):
        return ControlMode.CACC_PLATOONED
    return mode


def cacc_demand(gap_m: float, speed: float, lead_speed: float, headway_s: float,
                params: ControllerParams) -> float:
    """Unsaturated constant-time-gap control demand."""
    err = gap_m - params.desired_gap(speed, headway_s)
    return params.gap_gain * err + params.speed_gain * (lead_speed - speed)


def cacc_accel(
    gap_m: float | None,
    speed: float,
    lead_speed: float | None,
    headway_s: float,
    params: ControllerParams,
    desired_speed: float | None = None,
) -> float:
    """Saturated constant-time-gap acceleration.

    With no leader (``gap_m is None``) the vehicle cruises toward
    ``desired_speed``; with a leader the result is additionally capped by that
    cruise term so a fast leader cannot pull the follower past its set speed.
    """
    cruise = None
    if desired_speed is not None:
        cruise = params.cruise_gain * (desired_speed - speed)
    if gap_m is None:
        a = 0.0 if cruise is None else cruise
    else:
        if gap_m < 0:
            raise ValueError(f"gap must be non-negative, got {gap_m}")
        a = cacc_demand(gap_m, speed, lead_speed, headway_s, params)
        if cruise is not None:
            a = min(a, cruise)
    return min(params.accel_max, max(-params.decel_max, a))


def infeasibility_check(gap_m: float, speed: float, lead_speed: float,
                        params: ControllerParams,
                        headway_s: float | None = None) -> FallbackEvent | None:
    """Flag an infeasible platoon control problem.

    The demand is evaluated at the short (platooned) headway unless another
    headway is given.
    """
    h = params.short_headway_s if headway_s is None else headway_s
    demand = cacc_demand(gap_m, speed, lead_speed, h, params)
    if demand < -params.infeasible_factor * params.decel_max:
        return FallbackEvent.INFEASIBLE_SOLUTION
    return None


FALLBACK_LOG_FIELDS = ("time_s", "vehicle_id", "from_mode", "event", "to_mode")
