"""Replications, warm-up exclusion, metric aggregation and strategy x MPR sweeps."""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .channel import RECEPTION_LOG_FIELDS
from .control import FALLBACK_LOG_FIELDS, ControllerParams
from .dsrc import DEFAULT_TABLE, CoefficientTable, DsrcParams
from .traffic import (
    TRAJECTORY_FIELDS,
    DemandSpec,
    Freeway,
    IdmParams,
    InjectedEvent,
    InvariantViolation,
    LaneChangeParams,
    LanePolicy,
    RoadNetwork,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUMMARY_FIELDS = (
    "strategy", "mpr", "replication", "trials", "successes", "reception_rate",
    "xi_mean", "xi_median", "xi_var", "xi_q1", "xi_q3", "xi_min", "xi_max",
    "fallback_packet_drop", "fallback_infeasible", "throughput_vph",
)
# per-replication file carries attempt-level and diagnostic columns as well
REPLICATION_FIELDS = SUMMARY_FIELDS + (
    "status", "seed", "attempts", "attempt_success_rate", "mean_probability",
    "spawned", "retired", "on_network", "queued", "guard_activations",
    "lane_changes", "clamped", "out_of_domain",
)
ALL_STRATEGIES = ("BASE", "UML", "MML", "DL", "DLA")
DEFAULT_MPRS = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class ScenarioConfig:
    policy: LanePolicy = LanePolicy.DL
    demand: DemandSpec = DemandSpec(mpr=0.4)
    road_length_m: float = 8000.0
    lane_count: int = 4
    access_zones: tuple[tuple[float, float], ...] = ()
    horizon_s: float = 3900.0
    warmup_s: float = 300.0
    dt: float = 0.5
    control_every: int = 5
    replications: int = 5
    base_seed: int = 0
    dsrc: DsrcParams = DsrcParams()
    controller: ControllerParams = ControllerParams()
    idm: IdmParams = IdmParams()
    lane_change: LaneChangeParams = LaneChangeParams()
    injected_events: tuple[InjectedEvent, ...] = ()
    forced_probability: float | None = None
    coefficients_path: str | None = None
    reception_log: bool = False
    fallback_log: bool = False
    trajectory: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.warmup_s < self.horizon_s:
            raise ValueError("need 0 <= warmup_s < horizon_s")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.control_every < 1:
            raise ValueError("control_every must be >= 1")
        if self.forced_probability is not None and not 0 <= self.forced_probability <= 1:
            raise ValueError("forced_probability must lie in [0, 1]")
        # surfaces zone/policy mismatches before any run starts
        self.road()

    @property
    def mpr(self) -> float:
        return self.demand.mpr

    @property
    def steps(self) -> int:
        return int(round(self.horizon_s / self.dt))

    def road(self) -> RoadNetwork:
        zones = self.access_zones if self.policy is LanePolicy.DLA else ()
        return RoadNetwork(self.road_length_m, self.lane_count, self.policy, zones)

    def table(self) -> CoefficientTable:
        if self.coefficients_path:
            return CoefficientTable.load(self.coefficients_path)
        return DEFAULT_TABLE

    def cell(self, policy: LanePolicy | str, mpr: float) -> "ScenarioConfig":
        return replace(self, policy=LanePolicy(policy), demand=replace(self.demand, mpr=mpr))

    def seed_for(self, replication: int) -> int:
        return self.base_seed + replication

    def tag(self, replication: int) -> str:
        return f"{self.policy.value}_mpr{self.mpr:.2f}_rep{replication}"


@dataclass(frozen=True)
class XiSummary:
    mean: float
    median: float
    var: float
    q1: float
    q3: float
    min: float
    max: float

    @classmethod
    def of(cls, samples: Sequence[float]) -> "XiSummary | None":
        """Population variance, linear-interpolated quartiles."""
        if len(samples) == 0:
            return None
        a = np.asarray(samples, dtype=float)
        q1, med, q3 = np.percentile(a, [25, 50, 75])
        return cls(float(a.mean()), float(med), float(a.var()), float(q1), float(q3),
                   float(a.min()), float(a.max()))


@dataclass
class ReplicationResult:
    policy: LanePolicy
    mpr: float
    replication: int
    seed: int
    ok: bool = True
    error: str = ""
    trials: int = 0
    successes: int = 0
    attempts: int = 0
    attempt_successes: int = 0
    probability_sum: float = 0.0
    xi_samples: np.ndarray = field(default_factory=lambda: np.empty(0))
    fallback_packet_drop: int = 0
    fallback_infeasible: int = 0
    transitions: dict = field(default_factory=dict)
    spawned: int = 0
    retired: int = 0
    retired_after_warmup: int = 0
    on_network: int = 0
    queued: int = 0
    measured_s: float = 0.0
    guard_activations: int = 0
    lane_changes: int = 0
    clamped: int = 0
    out_of_domain: int = 0
    injected_applied: int = 0

    @property
    def reception_rate(self) -> float | None:
        return self.successes / self.trials if self.trials else None

    @property
    def throughput_vph(self) -> float:
        return self.retired_after_warmup / self.measured_s * 3600.0 if self.measured_s else 0.0

    @property
    def xi(self) -> XiSummary | None:
        return XiSummary.of(self.xi_samples)


@dataclass
class MetricsAggregate:
    policy: LanePolicy
    mpr: float
    results: list[ReplicationResult]
    trials: int
    successes: int
    xi: XiSummary | None
    fallback_packet_drop: int
    fallback_infeasible: int
    throughput_vph: float

    @property
    def reception_rate(self) -> float | None:
        return self.successes / self.trials if self.trials else None

    @property
    def failed(self) -> list[ReplicationResult]:
        return [r for r in self.results if not r.ok]


@contextmanager
def atomic_writer(path: Path) -> Iterator:
    """Text handle on a temp file in the target directory, renamed into place
    only if the block completes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(kind: str, fields: Sequence[str]) -> str:
    return f"# caccsim {kind} schema v{SCHEMA_VERSION}; columns: {','.join(fields)}\n"


def run_replication(config: ScenarioConfig, replication: int = 0,
                    output_dir: str | Path | None = None) -> ReplicationResult:
    """Run one seeded replication; invariant breaches mark the result failed."""
    seed = config.seed_for(replication)
    res = ReplicationResult(config.policy, config.mpr, replication, seed)
    out = Path(output_dir) if output_dir is not None else None
    wanted = []
    if out is not None:
        if config.reception_log:
            wanted.append(("reception", RECEPTION_LOG_FIELDS))
        if config.fallback_log:
            wanted.append(("fallback", FALLBACK_LOG_FIELDS))
        if config.trajectory:
            wanted.append(("trajectory", TRAJECTORY_FIELDS))
    try:
        with ExitStack() as stack:
            sinks = {}
            for kind, fields in wanted:
                fh = stack.enter_context(atomic_writer(out / f"{config.tag(replication)}_{kind}.csv"))
                fh.write(_header(f"{kind}-log", fields))
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(fields)
                sinks[kind] = w.writerow
            world = Freeway(
                config.road(), config.demand, seed,
                dt=config.dt, control_every=config.control_every, warmup_s=config.warmup_s,
                controller=config.controller, idm=config.idm, lane_change=config.lane_change,
                dsrc=config.dsrc, table=config.table(),
                forced_probability=config.forced_probability,
                injected_events=config.injected_events,
                reception_sink=sinks.get("reception"),
                fallback_sink=sinks.get("fallback"),
                trajectory_sink=sinks.get("trajectory"),
            )
            world.run(config.steps)
    except InvariantViolation as exc:
        log.error("replication %s failed: %s", config.tag(replication), exc)
        res.ok = False
        res.error = str(exc)
        return res
    st = world.stats
    res.trials, res.successes = st.trials, st.successes
    res.attempts = st.attempts
    res.attempt_successes = st.successes
    res.probability_sum = st.probability_sum
    res.xi_samples = np.asarray(st.xi_samples, dtype=float)
    res.transitions = dict(st.transitions)
    res.fallback_packet_drop = sum(n for (a, e, b), n in st.transitions.items()
                                   if a == "CACC_PLATOONED" and e == "PACKET_DROP")
    res.fallback_infeasible = sum(n for (a, e, b), n in st.transitions.items()
                                  if a == "CACC_PLATOONED" and e == "INFEASIBLE_SOLUTION")
    res.spawned, res.retired = st.spawned, st.retired
    res.retired_after_warmup = st.retired_after_warmup
    res.on_network = world.on_network()
    res.queued = len(world.queue)
    res.measured_s = config.steps * config.dt - config.warmup_s
    res.guard_activations = st.guard_activations
    res.lane_changes = st.lane_changes
    res.clamped = world.diag.clamped
    res.out_of_domain = world.diag.xi_out_of_domain + world.diag.x_out_of_domain
    res.injected_applied = st.injected_applied
    if res.spawned != res.retired + res.on_network:
        res.ok = False
        res.error = "vehicle conservation broken"
    return res


def aggregate(results: Sequence[ReplicationResult]) -> MetricsAggregate:
    """Pool the successful replications of one (strategy, MPR) cell."""
    if not results:
        raise ValueError("aggregate() needs at least one replication result")
    good = [r for r in results if r.ok]
    if not good:
        raise ValueError("aggregate() needs at least one successful replication")
    keys = {(r.policy, r.mpr) for r in results}
    if len(keys) != 1:
        raise ValueError(f"results span several cells: {sorted((p.value, m) for p, m in keys)}")
    samples = np.concatenate([r.xi_samples for r in good]) if good else np.empty(0)
    return MetricsAggregate(
        policy=good[0].policy,
        mpr=good[0].mpr,
        results=list(results),
        trials=sum(r.trials for r in good),
        successes=sum(r.successes for r in good),
        xi=XiSummary.of(samples),
        fallback_packet_drop=sum(r.fallback_packet_drop for r in good),
        fallback_infeasible=sum(r.fallback_infeasible for r in good),
        throughput_vph=float(np.mean([r.throughput_vph for r in good])),
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _metric_cells(trials, successes, rate, xi: XiSummary | None, drop, infeasible, thr) -> list:
    xs = [xi.mean, xi.median, xi.var, xi.q1, xi.q3, xi.min, xi.max] if xi else [None] * 7
    return [trials, successes, rate, *xs, drop, infeasible, thr]


def summary_row(agg: MetricsAggregate) -> list[str]:
    cells = [agg.policy.value, agg.mpr, "all"] + _metric_cells(
        agg.trials, agg.successes, agg.reception_rate, agg.xi,
        agg.fallback_packet_drop, agg.fallback_infeasible, agg.throughput_vph)
    return [_fmt(c) for c in cells]


def replication_row(r: ReplicationResult) -> list[str]:
    if not r.ok:
        cells = [r.policy.value, r.mpr, r.replication] + [None] * (len(SUMMARY_FIELDS) - 3)
        cells += ["failed: " + r.error, r.seed] + [None] * (len(REPLICATION_FIELDS) - len(SUMMARY_FIELDS) - 2)
        return [_fmt(c) for c in cells]
    cells = [r.policy.value, r.mpr, r.replication] + _metric_cells(
        r.trials, r.successes, r.reception_rate, r.xi,
        r.fallback_packet_drop, r.fallback_infeasible, r.throughput_vph)
    cells += [
        "ok", r.seed, r.attempts,
        r.successes / r.attempts if r.attempts else None,
        r.probability_sum / r.trials if r.trials else None,
        r.spawned, r.retired, r.on_network, r.queued, r.guard_activations,
        r.lane_changes, r.clamped, r.out_of_domain,
    ]
    return [_fmt(c) for c in cells]


def write_summary(path: str | Path, aggregates: Sequence[MetricsAggregate]) -> None:
    with atomic_writer(Path(path)) as fh:
        fh.write(_header("summary", SUMMARY_FIELDS).rstrip("\n") + "; variance=population; quartiles=linear\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for agg in aggregates:
            w.writerow(summary_row(agg))


def write_replications(path: str | Path, results: Sequence[ReplicationResult]) -> None:
    with atomic_writer(Path(path)) as fh:
        fh.write(_header("replications", REPLICATION_FIELDS).rstrip("\n") + "; variance=population; quartiles=linear\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATION_FIELDS)
        for r in results:
            w.writerow(replication_row(r))


def _run_task(args) -> ReplicationResult:
    config, rep, out = args
    return run_replication(config, rep, out)


def run_cells(cells: Sequence[ScenarioConfig], output_dir: str | Path | None = None,
              workers: int | None = None) -> list[list[ReplicationResult]]:
    """All replications of every cell; results come back in input order."""
    tasks = [(c, rep, output_dir) for c in cells for rep in range(c.replications)]
    if workers is None:
        workers = max(c.replications for c in cells) if cells else 1
    workers = max(1, min(workers, len(tasks), os.cpu_count() or 1))
    if workers == 1:
        flat = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_run_task, tasks))
    out, i = [], 0
    for c in cells:
        out.append(flat[i:i + c.replications])
        i += c.replications
    return out


def sweep(strategies: Sequence[LanePolicy | str], mprs: Sequence[float], base: ScenarioConfig,
          output_dir: str | Path | None = None, workers: int | None = None) -> list[MetricsAggregate | None]:
    """Every (strategy, MPR) combination, ``base.replications`` seeded runs each.

    A cell whose replications all fail yields ``None`` in that slot; the
    remaining cells still run.  With ``output_dir`` set, ``summary.csv`` and
    ``replications.csv`` are written there.
    """
    if not strategies or not mprs:
        raise ValueError("sweep needs at least one strategy and one MPR")
    cells = [base.cell(s, m) for s in strategies for m in mprs]
    per_cell = run_cells(cells, output_dir, workers)
    aggs: list[MetricsAggregate | None] = []
    for c, results in zip(cells, per_cell):
        if any(r.ok for r in results):
            aggs.append(aggregate(results))
        else:
            log.error("cell %s mpr=%.2f: all replications failed", c.policy.value, c.mpr)
            aggs.append(None)
    if output_dir is not None:
        out = Path(output_dir)
        write_summary(out / "summary.csv", [a for a in aggs if a is not None])
        write_replications(out / "replications.csv", [r for rs in per_cell for r in rs])
    return aggs
