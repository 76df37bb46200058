"""Analytical one-hop DSRC broadcast reception model.

The reception probability for a receiver at distance ``x`` from the sender is

    P_r = exp(-3 (x/phi)^2) * (1 + sum_{i=1..4} h_i(xi, phi) * (x/phi)^i)

where each ``h_i`` is a bivariate fourth-degree polynomial in the
communication density ``xi`` (events/s) and the transmission range ``phi``
(metres), and ``xi = delta * phi * f`` with ``delta`` in veh/km.

At zero load the fitted ``h_i`` reduce to roughly (0, 3, 0, 4.5), i.e. the
closed-form Nakagami m=3 reception curve.  That limit is what pins down the
two corrected coefficients in :data:`CORRECTIONS`.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

#: Upper end of the communication density range the polynomial was fitted on.
XI_MAX = 4400.0

#: Exponent pairs (j, k), j on density and k on range, every j + k <= 4.
EXPONENTS: tuple[tuple[int, int], ...] = tuple(
    (j, k) for j in range(5) for k in range(5) if j + k <= 4
)

# Coefficients as printed, keyed (i, j, k).  Two entries are typeset wrongly
# in the source table; they are replaced below via CORRECTIONS.
_PRINTED: dict[tuple[int, int, int], float] = {
    (1, 0, 0): 0.0209865, (1, 1, 0): -9.66304e-07, (1, 2, 0): -1.72786e-11,
    (1, 3, 0): 5.09506e-17, (1, 4, 0): -7.91921e-23, (1, 3, 1): 3.16577e-20,
    (1, 2, 1): 2.13587e-14, (1, 2, 2): -5.05716e-17, (1, 1, 1): 4.00928e-09,
    (1, 1, 2): -1.88707e-11, (1, 1, 3): 3.25406e-14, (1, 0, 1): 0.000418109,
    (1, 0, 2): -4.30875e-06, (1, 0, 3): 1.00775e-08, (1, 0, 4): -7.32254e-12,
    (2, 0, 0): 2.24743, (2, 1, 0): 7.84884e-07, (2, 2, 0): 2.28533e-10,
    (2, 3, 0): -5.89802e-16, (2, 4, 0): 3.55262e-22, (2, 3, 1): 4.07120e-19,
    (2, 2, 1): -2.66510e-13, (2, 2, 2): 8.64273e-17, (2, 1, 1): -7.31274e-08,
    (2, 1, 2): 2.98549e-10, (2, 1, 3): -3.24982e-13, (2, 0, 1): 0.00498750,
    (2, 0, 2): -7.22232e-06, (2, 0, 3): 1.69755e-08, (2, 0, 4): -2.94381e-11,
    (3, 0, 0): 2.56426, (3, 1, 0): 2.82287e-05, (3, 2, 0): -7.09939e-10,
    (3, 3, 0): 1.34371e-15, (3, 4, 0): -3.01956e-22, (3, 3, 1): -1.85451e-18,
    (3, 2, 1): 1.02847e-12, (3, 2, 2): 1.80250e-16, (3, 1, 1): 1.56259e-07,
    (3, 1, 2): -8.50944e-10, (3, 1, 3): 7.59094e-13, (3, 0, 1): -0.0227008,
    (3, 0, 2): 7.50391e-05, (3, 0, 3): -1.81469e-07, (3, 0, 4): 2.02182e-10,
    (4, 0, 0): 2.41146, (4, 1, 0): -9.32859e05, (4, 2, 0): 6.77403e-10,
    (4, 3, 0): -9.64188e-16, (4, 4, 0): 3.69652e-23, (4, 3, 1): 1.85043e-18,
    (4, 2, 1): -1.13894e-16, (4, 2, 2): -4.05333e-16, (4, 1, 1): -2.56738e-08,
    (4, 1, 2): 6.24415e-10, (4, 1, 3): -3.57571e-13, (4, 0, 1): 0.0191490,
    (4, 0, 2): -6.92678e-07, (4, 0, 3): 1.79917e-07, (4, 0, 4): -2.07263e-10,
}

#: Typesetting fixes applied on top of the printed values.
#: (4,1,0): printed "e05", a dropped minus sign; 1e5 would dwarf every term.
#: (4,0,2): printed "e-07"; "e-05" is needed for h_4(0, phi) to approach the
#: Nakagami m=3 value 4.5 (it gives 5.1 at 300 m, the printed value 11.3).
CORRECTIONS: Mapping[tuple[int, int, int], float] = MappingProxyType({
    (4, 1, 0): -9.32859e-05,
    (4, 0, 2): -6.92678e-05,
})


class OutOfDomainWarning(UserWarning):
    """Evaluation outside the range the coefficients were fitted on."""


@dataclass(frozen=True)
class CoefficientTable:
    """The 60 polynomial coefficients, four rows of 15 (j, k) terms."""

    entries: Mapping[tuple[int, int, int], float]

    def __post_init__(self):
        expected = {(i, j, k) for i in range(1, 5) for j, k in EXPONENTS}
        got = set(self.entries)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"bad coefficient keys: missing={missing} extra={extra}")
        frozen = MappingProxyType(dict(sorted(self.entries.items())))
        object.__setattr__(self, "entries", frozen)
        # row i -> tuple of (j, k, value), used by the hot path
        rows = tuple(
            tuple((j, k, frozen[(i, j, k)]) for j, k in EXPONENTS) for i in range(1, 5)
        )
        object.__setattr__(self, "_rows", rows)

    def __getitem__(self, key: tuple[int, int, int]) -> float:
        return self.entries[key]

    def replace(self, key: tuple[int, int, int], value: float) -> "CoefficientTable":
        d = dict(self.entries)
        d[key] = value
        return CoefficientTable(d)

    def to_text(self) -> str:
        lines = ["# i j k value"]
        for (i, j, k), v in self.entries.items():
            lines.append(f"{i} {j} {k} {v!r}")
        return "\n".join(lines) + "\n"

    def checksum(self) -> str:
        """SHA-256 over the canonical text form."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "CoefficientTable":
        entries: dict[tuple[int, int, int], float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 'i j k value', got {raw!r}")
            i, j, k = (int(p) for p in parts[:3])
            if (i, j, k) in entries:
                raise ValueError(f"line {lineno}: duplicate entry ({i}, {j}, {k})")
            entries[(i, j, k)] = float(parts[3])
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "CoefficientTable":
        return cls.from_text(Path(path).read_text())


def printed_coefficients() -> dict[tuple[int, int, int], float]:
    """Coefficients exactly as typeset, before corrections."""
    return dict(_PRINTED)


def default_table() -> CoefficientTable:
    d = dict(_PRINTED)
    d.update(CORRECTIONS)
    return CoefficientTable(d)


DEFAULT_TABLE = default_table()


@dataclass(frozen=True)
class DsrcParams:
    range_m: float = 300.0
    frequency_hz: float = 10.0

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError(f"range_m must be positive, got {self.range_m}")
        if not self.frequency_hz > 0:
            raise ValueError(f"frequency_hz must be positive, got {self.frequency_hz}")


@dataclass(frozen=True)
class ChannelLoad:
    delta_veh_per_km: float
    xi_events: float

    @classmethod
    def from_density(cls, delta_veh_per_km: float, params: DsrcParams) -> "ChannelLoad":
        xi = communication_density(delta_veh_per_km, params.range_m, params.frequency_hz)
        return cls(delta_veh_per_km, xi)


@dataclass
class ReceptionDiagnostics:
    """Counters for raw-value clamping and out-of-domain evaluations."""

    evaluations: int = 0
    clamped_high: int = 0
    clamped_low: int = 0
    xi_out_of_domain: int = 0
    x_out_of_domain: int = 0

    @property
    def clamped(self) -> int:
        return self.clamped_high + self.clamped_low

    def merge(self, other: "ReceptionDiagnostics") -> None:
        for name in ("evaluations", "clamped_high", "clamped_low",
                     "xi_out_of_domain", "x_out_of_domain"):
            setattr(self, name, getattr(self, name) + getattr(other, name))


def poly_h(table: CoefficientTable, i: int, xi: float, phi: float) -> float:
    """Evaluate ``h_i(xi, phi)``: all 15 terms, none skipped."""
    if i not in (1, 2, 3, 4):
        raise ValueError(f"polynomial index must be 1..4, got {i!r}")
    total = 0.0
    for j, k, c in table._rows[i - 1]:
        total += c * xi**j * phi**k
    return total


def _check_inputs(x: float, xi: float, phi: float) -> None:
    if x < 0 or xi < 0:
        raise ValueError(f"distance and density must be non-negative (x={x}, xi={xi})")
    if not phi > 0:
        raise ValueError(f"range must be positive, got {phi}")


def reception_probability_raw(table: CoefficientTable, x: float, xi: float, phi: float) -> float:
    """Unclamped model value.  May stray slightly outside [0, 1]."""
    _check_inputs(x, xi, phi)
    r = x / phi
    s = 0.0
    rp = 1.0
    for i in range(1, 5):
        rp *= r
        s += poly_h(table, i, xi, phi) * rp
    return math.exp(-3.0 * r * r) * (1.0 + s)


def reception_probability(
    table: CoefficientTable,
    x: float,
    xi: float,
    phi: float,
    diag: ReceptionDiagnostics | None = None,
) -> float:
    """Probability that one broadcast packet sent from distance ``x`` is received.

    Out-of-domain inputs (``xi > XI_MAX`` or ``x > phi``) are still evaluated.
    With ``diag`` supplied they are counted there; otherwise an
    :class:`OutOfDomainWarning` is issued.
    """
    raw = reception_probability_raw(table, x, xi, phi)
    ood_xi = xi > XI_MAX
    ood_x = x > phi
    if diag is not None:
        diag.evaluations += 1
        diag.xi_out_of_domain += ood_xi
        diag.x_out_of_domain += ood_x
    elif ood_xi or ood_x:
        warnings.warn(
            f"reception model evaluated outside fitted domain (x={x}, xi={xi}, phi={phi})",
            OutOfDomainWarning,
            stacklevel=2,
        )
    if raw > 1.0:
        if diag is not None:
            diag.clamped_high += 1
        return 1.0
    if raw < 0.0:
        if diag is not None:
            diag.clamped_low += 1
        return 0.0
    return raw


def communication_density(delta_veh_per_km: float, phi: float, f: float) -> float:
    """Channel load in events/s: veh/km times range (converted to km) times Hz."""
    if delta_veh_per_km < 0 or phi < 0 or f < 0:
        raise ValueError("communication_density arguments must be non-negative")
    return delta_veh_per_km * (phi / 1000.0) * f


@dataclass
class CurveSpec:
    """Grid for reproducing the reception-vs-distance curve family."""

    xis: list[float] = field(default_factory=lambda: [500.0, 1500.0, 3000.0])
    phi: float = 300.0
    xmax: float = 300.0
    dx: float = 1.0

    def xs(self) -> list[float]:
        n = int(math.floor(self.xmax / self.dx + 1e-9))
        return [round(m * self.dx, 10) for m in range(n + 1)]


def curve_rows(table: CoefficientTable, spec: CurveSpec) -> list[tuple[float, float, float]]:
    """``(x, xi, P_r)`` triples, xi-major."""
    diag = ReceptionDiagnostics()
    return [
        (x, xi, reception_probability(table, x, xi, spec.phi, diag))
        for xi in spec.xis
        for x in spec.xs()
    ]
