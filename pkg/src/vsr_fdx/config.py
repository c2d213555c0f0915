"""Key-value text configuration files.

One ``key = value`` per line, ``#`` starts a comment, keys may repeat where
a list is expected (``fault``, ``scenario``). Example scenario file::

    grid_voltage = 40
    duration = 0.5
    fault = SaP, 0.2
    fault = SbP, 0.2, 0.35
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .sim import FaultEntry, FaultScenario, SimParams, SwitchId


def parse_kv_text(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        items.append((key.strip(), value.strip()))
    return items


def read_kv_file(path) -> list[tuple[str, str]]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv_text(text, str(path))


def config_hash(items: list[tuple[str, str]]) -> str:
    """Short stable digest of a parsed config, recorded in output files."""
    blob = "\n".join(f"{k}={v}" for k, v in items).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def parse_fault(value: str) -> FaultEntry:
    """``<switch>,<onset_s>[,<clear_s>]``"""
    parts = [p.strip() for p in value.split(",")]
    if len(parts) not in (2, 3):
        raise ConfigError(f"fault: expected <switch>,<onset>[,<clear>], got {value!r}")
    sw = SwitchId.parse(parts[0])
    onset = parse_float("fault onset", parts[1])
    clear = parse_float("fault clear", parts[2]) if len(parts) == 3 else None
    return FaultEntry(sw, onset, clear)


def parse_params(items, base: SimParams | None = None) -> tuple[SimParams, list[tuple[str, str]]]:
    """Apply SimParams overrides; returns the params and the unconsumed items."""
    names = set(SimParams.field_names())
    overrides = {}
    rest = []
    for key, value in items:
        if key in names:
            overrides[key] = parse_float(key, value)
        else:
            rest.append((key, value))
    base = base or SimParams()
    kwargs = {n: getattr(base, n) for n in SimParams.field_names()}
    kwargs.update(overrides)
    return SimParams(**kwargs), rest


@dataclass
class ScenarioConfig:
    params: SimParams = field(default_factory=SimParams)
    scenario: FaultScenario = field(default_factory=FaultScenario)
    duration: float | None = None
    seed: int | None = None
    onset_jitter: float = 0.0
    hash: str = ""


def parse_scenario_items(items, source="<config>") -> ScenarioConfig:
    params, rest = parse_params(items)
    faults = []
    cfg = ScenarioConfig(params=params, hash=config_hash(items))
    for key, value in rest:
        if key == "fault":
            faults.append(parse_fault(value))
        elif key == "duration":
            cfg.duration = parse_float(key, value)
        elif key == "seed":
            cfg.seed = int(parse_float(key, value))
        elif key == "onset_jitter":
            cfg.onset_jitter = parse_float(key, value)
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")
    cfg.scenario = FaultScenario(tuple(faults))
    return cfg


def load_scenario_config(path) -> ScenarioConfig:
    return parse_scenario_items(read_kv_file(path), str(path))
