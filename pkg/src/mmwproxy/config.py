"""Scenario configuration: a YAML document whose dotted key paths
(``proxy.ttr``, ``topology.queue_capacity_packets`` ...) mirror the
component config fields and can be overridden one by one."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .channel import SyntheticScenarioSpec, TraceError, load_scenario_spec, scenario_spec_from_mapping
from .phy import LinkAbstractionConfig, load_mcs_table
from .proxy import Policy, ProxyConfig
from .transport import TransportConfig


class ConfigError(ValueError):
    pass


@dataclass
class TraceConfig:
    file: Optional[str] = None           # trace CSV
    synthetic: Any = None                # scenario YAML path or inline mapping
    update_interval: float = 0.01
    interpolation: str = "db"
    vary_with_seed: bool = True          # synthetic jitter seed mixes in the run seed


@dataclass
class LinkConfig:
    bandwidth_hz: float = 5e8
    noise_power_dbm: float = -87.01
    delta_db: float = 6.5
    bler_target: float = 1e-2
    mcs_table: Optional[str] = None      # CSV path; None = bundled SC table

    def build(self, base_dir: Path) -> LinkAbstractionConfig:
        table = load_mcs_table(_resolve(self.mcs_table, base_dir) if self.mcs_table else None)
        return LinkAbstractionConfig(self.bandwidth_hz, self.noise_power_dbm, self.delta_db,
                                     self.bler_target, table)


@dataclass
class TopologyConfig:
    wired_rate_bps: float = 10e9
    one_way_delay: float = 0.020
    queue_capacity_packets: int = 500
    wireless_delay: float = 0.0
    uplink_delay: float = 0.0


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    duration: float = 30.0
    seeds: list = field(default_factory=lambda: [1])
    policies: list = field(default_factory=lambda: ["baseline", "reactive", "proactive"])
    trace: TraceConfig = field(default_factory=TraceConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    base_dir: str = "."

    def validate(self) -> "ScenarioConfig":
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        self.policies = [Policy.parse(p).value for p in self.policies]
        self.seeds = [int(s) for s in self.seeds]
        t = self.trace
        if (t.file is None) == (t.synthetic is None):
            raise ConfigError("exactly one of trace.file and trace.synthetic must be set")
        for p in (t.file, self.link.mcs_table,
                  t.synthetic if isinstance(t.synthetic, str) else None):
            if p is not None and not _resolve(p, Path(self.base_dir)).exists():
                raise ConfigError(f"referenced file not found: {p}")
        if t.interpolation not in ("db", "mw"):
            raise ConfigError("trace.interpolation must be 'db' or 'mw'")
        if t.update_interval <= 0:
            raise ConfigError("trace.update_interval must be positive")
        return self

    def synthetic_spec(self) -> Optional[SyntheticScenarioSpec]:
        s = self.trace.synthetic
        if s is None:
            return None
        if isinstance(s, str):
            return load_scenario_spec(_resolve(s, Path(self.base_dir)))
        return scenario_spec_from_mapping(s)

    def trace_path(self) -> Optional[Path]:
        return _resolve(self.trace.file, Path(self.base_dir)) if self.trace.file else None

    def to_flat(self) -> dict:
        return flatten(to_mapping(self))


def _resolve(p, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


SECTIONS = {"trace": TraceConfig, "link": LinkConfig, "topology": TopologyConfig,
            "transport": TransportConfig, "proxy": ProxyConfig}


def to_mapping(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "base_dir":
            continue
        if dataclasses.is_dataclass(v):
            v = {g.name: _plain(getattr(v, g.name)) for g in dataclasses.fields(v)}
        out[f.name] = _plain(v)
    return out


def _plain(v):
    if isinstance(v, Policy):
        return v.value
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "synthetic":
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def set_key(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), yaml.safe_load(v) if v.strip() else None


def _coerce_numbers(cls, values: dict, section: str) -> dict:
    # YAML 1.1 reads "5.0e8" (no exponent sign) as a string
    out = dict(values)
    for f in dataclasses.fields(cls):
        v = out.get(f.name)
        if isinstance(v, str) and isinstance(f.default, (int, float)) \
                and not isinstance(f.default, bool):
            try:
                out[f.name] = float(v) if isinstance(f.default, float) else int(v)
            except ValueError:
                raise ConfigError(f"{section}.{f.name}: expected a number, got {v!r}") from None
    return out


def from_mapping(doc: dict, base_dir=".") -> ScenarioConfig:
    doc = copy.deepcopy(doc or {})
    kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
    top = {f.name for f in dataclasses.fields(ScenarioConfig)} - {"base_dir"}
    for k, v in doc.items():
        if k not in top:
            raise ConfigError(f"unknown config key {k!r}")
        if k in SECTIONS:
            cls = SECTIONS[k]
            names = {f.name for f in dataclasses.fields(cls)}
            v = v or {}
            if not isinstance(v, dict):
                raise ConfigError(f"{k} must be a mapping")
            bad = set(v) - names
            if bad:
                raise ConfigError(f"unknown key(s) in {k}: {', '.join(sorted(bad))}")
            v = _coerce_numbers(cls, v, k)
            try:
                v = cls(**v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{k}: {exc}") from None
        kwargs[k] = v
    if isinstance(kwargs.get("policies"), str):
        kwargs["policies"] = [kwargs["policies"]]
    if isinstance(kwargs.get("seeds"), int):
        kwargs["seeds"] = [kwargs["seeds"]]
    try:
        return ScenarioConfig(**kwargs).validate()
    except (TraceError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: Optional[list] = None) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    for item in overrides or ():
        k, v = parse_override(item) if isinstance(item, str) else item
        set_key(doc, k, v)
    return from_mapping(doc, base_dir=path.parent)
