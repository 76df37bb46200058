"""Command-line entry point: ``caccsim {run,sweep,curves,validate-coefficients}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, SweepSpec, load_config
from .dsrc import (
    CORRECTIONS,
    DEFAULT_TABLE,
    XI_MAX,
    CoefficientTable,
    CurveSpec,
    curve_rows,
    printed_coefficients,
    reception_probability,
    reception_probability_raw,
)
from .scenario import SCHEMA_VERSION, ScenarioConfig, atomic_writer, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4
EXIT_VALIDATION = 5

OUTPUT_ENV = "CACCSIM_OUTPUT_DIR"

log = logging.getLogger("caccsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip().upper() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="caccsim", description="Freeway CACC simulation with an analytical DSRC reception model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sim_flags(sp):
        sp.add_argument("--config", required=True, help="scenario INI file")
        sp.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./out)")
        sp.add_argument("--seed", type=int, help="override scenario.base_seed")
        sp.add_argument("--replications", type=int, help="override scenario.replications")
        sp.add_argument("--workers", type=int, help="parallel replications (default: number of replications)")
        sp.add_argument("--reception-log", action="store_true", help="write per-trial reception logs")
        sp.add_argument("--fallback-log", action="store_true", help="write control-mode transition logs")
        sp.add_argument("--trajectory", action="store_true", help="write per-step trajectory dumps (large)")
        sp.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    sp = sub.add_parser("run", help="run every replication of one scenario")
    sim_flags(sp)
    sp = sub.add_parser("sweep", help="run the strategy x MPR matrix")
    sim_flags(sp)
    sp.add_argument("--strategies", type=_str_list, help="comma list, overrides [sweep] strategies")
    sp.add_argument("--mprs", type=_float_list, help="comma list of fractions, overrides [sweep] mprs")

    sp = sub.add_parser("curves", help="reception probability vs distance as CSV")
    sp.add_argument("--xi", type=_float_list, default=[500.0, 1500.0, 3000.0], help="communication densities")
    sp.add_argument("--phi", type=float, default=300.0, help="transmission range in metres")
    sp.add_argument("--xmax", type=float, default=300.0, help="largest distance in metres")
    sp.add_argument("--dx", type=float, default=1.0, help="distance step in metres")
    sp.add_argument("--coefficients", help="coefficient table file (default: built-in)")
    sp.add_argument("--output", help="CSV file (default: stdout)")

    sp = sub.add_parser("validate-coefficients", help="print the coefficient table and run sanity checks")
    sp.add_argument("--coefficients", help="coefficient table file (default: built-in)")
    return p


def _output_dir(args) -> Path:
    return Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "out")


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if args.seed is not None:
        kw["base_seed"] = args.seed
    if args.replications is not None:
        kw["replications"] = args.replications
    if args.reception_log:
        kw["reception_log"] = True
    if args.fallback_log:
        kw["fallback_log"] = True
    if args.trajectory:
        kw["trajectory"] = True
    return replace(config, **kw) if kw else config


def _simulate(args) -> int:
    config, spec = load_config(args.config)
    try:
        config = _apply_overrides(config, args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.command == "run":
        strategies, mprs = [config.policy.value], [config.mpr]
    else:
        strategies = args.strategies or list(spec.strategies)
        mprs = args.mprs or list(spec.mprs)
        try:
            SweepSpec(tuple(strategies), tuple(mprs))
            for s in strategies:
                config.cell(s, mprs[0])
            for m in mprs:
                config.cell(strategies[0], m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    workers = args.workers if args.workers is not None else config.replications
    out = _output_dir(args)
    log.info("running %d cell(s) x %d replication(s) -> %s", len(strategies) * len(mprs),
             config.replications, out)
    aggs = sweep(strategies, mprs, config, out, workers)
    failed = sum(len(a.failed) for a in aggs if a is not None) + sum(
        config.replications for a in aggs if a is None)
    for a in aggs:
        if a is None:
            continue
        rate = "n/a" if a.reception_rate is None else f"{a.reception_rate:.5f}"
        xi = "n/a" if a.xi is None else f"{a.xi.mean:.1f}"
        print(f"{a.policy.value:5s} mpr={a.mpr:.2f} trials={a.trials} reception_rate={rate} xi_mean={xi}")
    if failed:
        log.error("%d replication(s) failed an invariant check; see replications.csv", failed)
        return EXIT_INVARIANT
    return EXIT_OK


def _table(path: str | None) -> CoefficientTable:
    if path is None:
        return DEFAULT_TABLE
    try:
        return CoefficientTable.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read coefficient file {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad coefficient file {path}: {exc}") from None


def _curves(args) -> int:
    if args.phi <= 0 or args.dx <= 0 or args.xmax < 0 or any(x < 0 for x in args.xi):
        raise ConfigError("curves: need phi > 0, dx > 0, xmax >= 0, xi >= 0")
    rows = curve_rows(_table(args.coefficients), CurveSpec(list(args.xi), args.phi, args.xmax, args.dx))
    header = f"# caccsim curves schema v{SCHEMA_VERSION}; phi={args.phi!r}\n"
    if args.output:
        with atomic_writer(Path(args.output)) as fh:
            _write_curves(fh, header, rows)
    else:
        _write_curves(sys.stdout, header, rows)
    return EXIT_OK


def _write_curves(fh, header, rows):
    fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("x_m", "xi", "p_r"))
    w.writerows((repr(x), repr(xi), repr(p)) for x, xi, p in rows)


def sanity_checks(table: CoefficientTable) -> list[tuple[str, bool, str]]:
    """Domain checks on a coefficient table: (name, passed, detail).  The
    last entry is informational and never fails."""
    checks = []
    worst = max(abs(reception_probability(table, 0.0, xi, phi) - 1.0)
                for xi in range(0, 4401, 100) for phi in range(100, 1001, 100))
    checks.append(("P(x=0) == 1", worst <= 1e-12, f"max deviation {worst:.3g}"))
    raw = [reception_probability_raw(table, x, xi, 300.0)
           for xi in range(0, int(XI_MAX) + 1, 200) for x in range(0, 301, 5)]
    checks.append(("raw P within [-0.05, 1.05] for phi=300", min(raw) >= -0.05 and max(raw) <= 1.05,
                   f"raw range [{min(raw):.4f}, {max(raw):.4f}]"))
    order = [reception_probability(table, 150.0, xi, 300.0) for xi in range(0, 4401, 500)]
    checks.append(("P(150 m) non-increasing in xi", all(b <= a for a, b in zip(order, order[1:])),
                   " ".join(f"{p:.5f}" for p in order)))
    rise = 0.0
    for xi in (500.0, 1500.0, 3000.0):
        ps = [reception_probability(table, float(x), xi, 300.0) for x in range(301)]
        rise = max(rise, max(b - a for a, b in zip(ps, ps[1:])))
    checks.append(("info: largest 1 m rise in P over x in [0, 300]", True, f"{rise:.3g}"))
    return checks


def _validate(args) -> int:
    table = _table(args.coefficients)
    printed = printed_coefficients()
    print(f"# {len(table.entries)} coefficients; sha256={table.checksum()}")
    print("i,j,k,value,printed")
    for (i, j, k), v in table.entries.items():
        mark = "" if printed[(i, j, k)] == v else repr(printed[(i, j, k)])
        print(f"{i},{j},{k},{v!r},{mark}")
    for i in range(1, 5):
        row = "".join(f"{table[(i, j, k)]!r};" for j in range(5) for k in range(5) if j + k <= 4)
        print(f"# row h{i} sha256={hashlib.sha256(row.encode()).hexdigest()[:16]}")
    if table.entries == DEFAULT_TABLE.entries:
        print(f"# matches built-in table ({len(CORRECTIONS)} corrected entries)")
    else:
        diff = [key for key in table.entries if table[key] != DEFAULT_TABLE[key]]
        print(f"# differs from built-in table at {diff}")
    ok = True
    for name, passed, detail in sanity_checks(table):
        ok &= passed
        status = "INFO" if name.startswith("info:") else ("PASS" if passed else "FAIL")
        print(f"{status} {name.removeprefix('info: ')}: {detail}")
    return EXIT_OK if ok else EXIT_VALIDATION


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbosity = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("run", "sweep"):
            return _simulate(args)
        if args.command == "curves":
            return _curves(args)
        return _validate(args)
    except ConfigError as exc:
        print(f"caccsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"caccsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
