"""INI-style scenario configuration.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments.  Every key is optional and defaults to the value listed
in ``configs/reference.ini``.  Lists are comma separated.  Access zones are
``start-end`` pairs in metres; injected events are ``time selector EVENT``
triples separated by ``;``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .control import ControllerParams, FallbackEvent
from .dsrc import DsrcParams
from .scenario import ALL_STRATEGIES, DEFAULT_MPRS, ScenarioConfig
from .traffic import DemandSpec, IdmParams, InjectedEvent, LaneChangeParams, LanePolicy


class ConfigError(ValueError):
    """Configuration could not be read or failed validation."""


@dataclass(frozen=True)
class SweepSpec:
    strategies: tuple[str, ...] = ALL_STRATEGIES
    mprs: tuple[float, ...] = DEFAULT_MPRS


# section -> dataclass whose fields are read verbatim from that section
_PARAM_SECTIONS = {
    "demand": DemandSpec,
    "controller": ControllerParams,
    "idm": IdmParams,
    "lane_change": LaneChangeParams,
}

_SCENARIO_KEYS = {
    "policy": str, "mpr": float, "horizon_s": float, "warmup_s": float, "dt": float,
    "control_every": int, "replications": int, "base_seed": int,
    "forced_probability": float,
}
_ROAD_KEYS = {"length_m": float, "lane_count": int, "access_zones": str}
_DSRC_KEYS = {"range_m": float, "frequency_hz": float, "coefficients": str}
_OUTPUT_KEYS = {"reception_log": bool, "fallback_log": bool, "trajectory": bool}
_SWEEP_KEYS = {"strategies": str, "mprs": str}
_EVENT_KEYS = {"inject": str}


def known_keys() -> dict[str, list[str]]:
    """Every accepted ``section -> keys``."""
    out = {
        "scenario": list(_SCENARIO_KEYS), "road": list(_ROAD_KEYS), "dsrc": list(_DSRC_KEYS),
        "events": list(_EVENT_KEYS), "output": list(_OUTPUT_KEYS), "sweep": list(_SWEEP_KEYS),
    }
    for name, cls in _PARAM_SECTIONS.items():
        out[name] = [f.name for f in fields(cls) if name != "demand" or f.name != "mpr"]
    return out


def _coerce(raw: str, typ, where: str) -> Any:
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


def _field_type(cls, name: str):
    for f in fields(cls):
        if f.name == name:
            default = f.default
            return type(default) if default is not dataclasses.MISSING else float
    raise KeyError(name)


def parse_zones(text: str) -> tuple[tuple[float, float], ...]:
    zones = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            a, b = chunk.split("-")
            zones.append((float(a), float(b)))
        except ValueError:
            raise ConfigError(f"road.access_zones: bad zone {chunk!r}, expected start-end") from None
    return tuple(zones)


def parse_events(text: str) -> tuple[InjectedEvent, ...]:
    events = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 3:
            raise ConfigError(f"events.inject: expected 'time selector EVENT', got {chunk!r}")
        try:
            events.append(InjectedEvent(float(parts[0]), parts[1], FallbackEvent(parts[2].upper())))
        except ValueError as exc:
            raise ConfigError(f"events.inject: {exc}") from None
    return tuple(events)


def _section(cp: configparser.ConfigParser, name: str, keys) -> dict[str, str]:
    if not cp.has_section(name):
        return {}
    got = dict(cp.items(name))
    unknown = sorted(set(got) - set(keys))
    if unknown:
        raise ConfigError(f"[{name}]: unknown key(s) {', '.join(unknown)}")
    return got


def config_from_text(text: str, base_dir: Path | None = None) -> tuple[ScenarioConfig, SweepSpec]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    allowed = set(known_keys())
    extra = sorted(set(cp.sections()) - allowed)
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")

    kwargs: dict[str, Any] = {}
    sc = _section(cp, "scenario", _SCENARIO_KEYS)
    for key, raw in sc.items():
        if not raw.strip():
            continue  # empty value = default
        kwargs[key] = _coerce(raw, _SCENARIO_KEYS[key], f"scenario.{key}")
    mpr = kwargs.pop("mpr", None)
    if "policy" in kwargs:
        try:
            kwargs["policy"] = LanePolicy(kwargs["policy"].upper())
        except ValueError:
            raise ConfigError(f"scenario.policy: unknown strategy {kwargs['policy']!r}") from None

    for name, cls in _PARAM_SECTIONS.items():
        sect = _section(cp, name, known_keys()[name])
        vals = {k: _coerce(v, _field_type(cls, k), f"{name}.{k}") for k, v in sect.items()}
        if name == "demand" and mpr is not None:
            vals["mpr"] = mpr
        if vals or name == "demand":
            try:
                kwargs[name] = replace(cls(), **vals) if name != "demand" else cls(**{**_demand_defaults(), **vals})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from None

    road = _section(cp, "road", _ROAD_KEYS)
    if "length_m" in road:
        kwargs["road_length_m"] = _coerce(road["length_m"], float, "road.length_m")
    if "lane_count" in road:
        kwargs["lane_count"] = _coerce(road["lane_count"], int, "road.lane_count")
    if "access_zones" in road:
        kwargs["access_zones"] = parse_zones(road["access_zones"])

    dsrc = _section(cp, "dsrc", _DSRC_KEYS)
    dkw = {k: _coerce(dsrc[k], float, f"dsrc.{k}") for k in ("range_m", "frequency_hz") if k in dsrc}
    if dkw:
        try:
            kwargs["dsrc"] = DsrcParams(**dkw)
        except ValueError as exc:
            raise ConfigError(f"[dsrc]: {exc}") from None
    if dsrc.get("coefficients"):
        p = Path(dsrc["coefficients"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"dsrc.coefficients: no such file {p}")
        kwargs["coefficients_path"] = str(p)

    ev = _section(cp, "events", _EVENT_KEYS)
    if "inject" in ev:
        kwargs["injected_events"] = parse_events(ev["inject"])

    for key, raw in _section(cp, "output", _OUTPUT_KEYS).items():
        kwargs[key] = _coerce(raw, bool, f"output.{key}")

    try:
        config = ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    if config.coefficients_path:
        try:
            config.table()
        except ValueError as exc:
            raise ConfigError(f"dsrc.coefficients: {exc}") from None

    sw = _section(cp, "sweep", _SWEEP_KEYS)
    spec = SweepSpec()
    if "strategies" in sw:
        strategies = tuple(s.strip().upper() for s in sw["strategies"].split(",") if s.strip())
        for s in strategies:
            if s not in LanePolicy.__members__:
                raise ConfigError(f"sweep.strategies: unknown strategy {s!r}")
        spec = replace(spec, strategies=strategies)
    if "mprs" in sw:
        mprs = tuple(_coerce(m, float, "sweep.mprs") for m in sw["mprs"].split(",") if m.strip())
        if any(not 0 <= m <= 1 for m in mprs):
            raise ConfigError("sweep.mprs: values must lie in [0, 1]")
        spec = replace(spec, mprs=mprs)
    if not spec.strategies or not spec.mprs:
        raise ConfigError("sweep: strategy and MPR lists must be non-empty")
    return config, spec


def _demand_defaults() -> dict[str, Any]:
    d = ScenarioConfig().demand
    return {f.name: getattr(d, f.name) for f in fields(d)}


def load_config(path: str | Path) -> tuple[ScenarioConfig, SweepSpec]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return config_from_text(text, base_dir=path.parent)
