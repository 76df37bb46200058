"""Per-step stochastic packet-reception testing between platoon neighbours."""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dsrc import (
    CoefficientTable,
    DsrcParams,
    ReceptionDiagnostics,
    communication_density,
    reception_probability,
)

MAX_ATTEMPTS = 5


@dataclass(frozen=True)
class BroadcastRoster:
    """Longitudinal positions of every broadcasting vehicle, all lanes pooled."""

    positions_m: tuple[float, ...] = ()
    ids: tuple[int, ...] = ()

    @classmethod
    def build(cls, members: Sequence[tuple[float, int]]) -> "BroadcastRoster":
        ordered = sorted(members)
        return cls(tuple(p for p, _ in ordered), tuple(i for _, i in ordered))

    def __len__(self) -> int:
        return len(self.positions_m)

    def __contains__(self, vehicle_id: int) -> bool:
        return vehicle_id in self.ids


EMPTY_ROSTER = BroadcastRoster()


@dataclass(frozen=True)
class ReceptionOutcome:
    success: bool
    attempts_used: int
    probability_used: float
    delta: float = 0.0
    xi: float = 0.0


def local_broadcaster_density(
    receiver_pos_m: float,
    roster: BroadcastRoster,
    phi: float,
    receiver_id: int | None = None,
) -> float:
    """Broadcasters per km within the closed window ``[pos - phi, pos + phi]``.

    The receiver itself is not counted when ``receiver_id`` is in the roster.
    """
    pos = roster.positions_m
    lo = bisect_left(pos, receiver_pos_m - phi)
    hi = bisect_right(pos, receiver_pos_m + phi)
    n = hi - lo
    if receiver_id is not None and n and receiver_id in roster.ids[lo:hi]:
        n -= 1
    return n / (2.0 * phi / 1000.0)


def attempt_reception(p: float, rng: np.random.Generator) -> bool:
    """One Bernoulli attempt: draw u on [0, 1) and succeed iff u < p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return rng.random() < p


def run_attempts(
    probability: Callable[[], float],
    rng: np.random.Generator,
    max_attempts: int = MAX_ATTEMPTS,
) -> ReceptionOutcome:
    """Retry loop: re-query ``probability`` before every attempt, stop on first success."""
    p = 0.0
    for attempt in range(1, max_attempts + 1):
        p = probability()
        if attempt_reception(p, rng):
            return ReceptionOutcome(True, attempt, p)
    return ReceptionOutcome(False, max_attempts, p)


def reception_trial(
    x: float,
    roster: BroadcastRoster,
    table: CoefficientTable,
    params: DsrcParams,
    rng: np.random.Generator,
    receiver_pos_m: float = 0.0,
    receiver_id: int | None = None,
    diag: ReceptionDiagnostics | None = None,
) -> ReceptionOutcome:
    """Up to five independent attempts to receive the predecessor's status message.

    Density, channel load and reception probability are recomputed from the
    roster on every attempt.
    """
    if x < 0:
        raise ValueError(f"distance must be non-negative, got {x}")
    load = [0.0, 0.0]

    def probability() -> float:
        delta = local_broadcaster_density(receiver_pos_m, roster, params.range_m, receiver_id)
        xi = communication_density(delta, params.range_m, params.frequency_hz)
        load[0], load[1] = delta, xi
        return reception_probability(table, x, xi, params.range_m, diag)

    out = run_attempts(probability, rng)
    return ReceptionOutcome(out.success, out.attempts_used, out.probability_used, load[0], load[1])


RECEPTION_LOG_FIELDS = (
    "time_s", "vehicle_id", "x_m", "delta", "xi", "p", "attempts_used", "success",
)


def reception_log_row(time_s: float, vehicle_id: int, x: float, out: ReceptionOutcome) -> tuple:
    return (time_s, vehicle_id, x, out.delta, out.xi, out.probability_used,
            out.attempts_used, int(out.success))
