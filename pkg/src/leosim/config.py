"""Scenario configuration: dataclasses mirroring the flat key-value config
file sections, presets, overrides, and validation diagnostics.

Precedence when resolving: preset defaults < config file < --set overrides
< dedicated CLI flags.
"""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field, fields, replace

from .dql import AgentConfig
from .orbits import ConfigurationError, ConstellationConfig, SatId
from .topology import DelayParams

AGENT_SEED_OFFSET = 7919
GROUND_SEED_OFFSET = 1299709
EPISODE_SEED_OFFSET = 10_000_019


@dataclass(frozen=True)
class GroundConfig:
    n_gateways: int = 12
    n_user_terminals: int = 50
    max_latitude_deg: float = 55.0
    min_separation_deg: float = 5.0
    ground_file: str | None = None


@dataclass(frozen=True)
class TrafficConfig:
    lambda0: float = 2.0
    n_flows: int = 100


@dataclass(frozen=True)
class EngineConfig:
    t_sim_s: float = 600.0
    warmup_s: float = 100.0
    buffer_packets: int = 200
    ttl_hops: int = 64
    table_epoch_s: float = 60.0
    topology_step_s: float = 1.0
    freeze_topology: bool = False
    rl_online_updates: bool = False
    trace_log: bool = False
    link_outages: tuple = ()
    episode_length_s: float = 60.0
    pretrain_eta_min: float = 0.2
    pretrain_eta_max: float = 1.2


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 42
    n_seeds: int = 20
    etas: tuple = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
    policies: tuple = ("rl", "hybrid")
    out_dir: str = "results"
    workers: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    ground: GroundConfig = field(default_factory=GroundConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    links: DelayParams = field(default_factory=DelayParams)
    engine: EngineConfig = field(default_factory=EngineConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunConfig = field(default_factory=RunConfig)


def paper_preset() -> ScenarioConfig:
    """Full-scale defaults (8x20 constellation, 100 flows, 600 s runs)."""
    return ScenarioConfig()


def mini_preset() -> ScenarioConfig:
    """Desk-scale preset: small constellation and ground segment, short runs,
    and service/buffer settings that reach the congestion regime at eta ~ 1."""
    return ScenarioConfig(
        constellation=ConstellationConfig(planes=4, sats_per_plane=8, altitude_km=2000.0),
        ground=GroundConfig(n_gateways=3, n_user_terminals=8,
                            max_latitude_deg=45.0, min_separation_deg=12.0),
        traffic=TrafficConfig(lambda0=2.0, n_flows=20),
        links=DelayParams(isl_max_km=13000.0, min_elevation_deg=5.0,
                          service_rate_override_pps=8.0),
        engine=EngineConfig(
            t_sim_s=120.0, warmup_s=20.0, buffer_packets=50,
            table_epoch_s=10.0, episode_length_s=20.0,
        ),
        agent=AgentConfig(pretrain_steps=50_000, epsilon_decay_steps=40_000,
                          delay_scale_ms=50.0),
        run=RunConfig(n_seeds=5, etas=(0.2, 0.6, 1.0, 1.2)),
    )


PRESETS = {"paper": paper_preset, "mini": mini_preset}

_SAT_ID_RE = re.compile(r"^S(\d+)-(\d+)$")


def _parse_node(token: str):
    m = _SAT_ID_RE.match(token)
    if m:
        return SatId(int(m.group(1)), int(m.group(2)))
    return token


def _parse_outages(text: str) -> tuple:
    """Format: src:dst:t_start:t_end entries separated by ';'."""
    if not text.strip():
        return ()
    out = []
    for entry in text.split(";"):
        parts = entry.strip().split(":")
        if len(parts) != 4:
            raise ConfigurationError(f"link_outages: bad entry {entry!r}")
        out.append((_parse_node(parts[0]), _parse_node(parts[1]),
                    float(parts[2]), float(parts[3])))
    return tuple(out)


def _fmt_outages(outages: tuple) -> str:
    return ";".join(f"{s}:{d}:{t0}:{t1}" for s, d, t0, t1 in outages)


def _parse_value(raw: str, sample):
    raw = raw.strip()
    if sample is None or raw.lower() in ("none", ""):
        if raw.lower() in ("none", ""):
            return None
        sample = ""
    if isinstance(sample, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"expected boolean, got {raw!r}")
    if isinstance(sample, int):
        return int(raw)
    if isinstance(sample, float):
        return float(raw)
    if isinstance(sample, tuple):
        if not raw:
            return ()
        items = [x.strip() for x in raw.split(",")]
        if sample and isinstance(sample[0], float):
            return tuple(float(x) for x in items)
        if sample and isinstance(sample[0], int):
            return tuple(int(x) for x in items)
        return tuple(items)
    return raw


_SECTIONS = {
    "constellation": "constellation",
    "ground": "ground",
    "traffic": "traffic",
    "links": "links",
    "engine": "engine",
    "agent": "agent",
    "run": "run",
}

# fields whose None/tuple handling needs a type hint despite a None default
_OPTIONAL_FLOATS = {("links", "service_rate_override_pps")}
_OPTIONAL_STRS = {("ground", "ground_file")}


def to_ini(config: ScenarioConfig) -> str:
    cp = configparser.ConfigParser()
    for section, attr in _SECTIONS.items():
        sub = getattr(config, attr)
        cp[section] = {}
        for f in fields(sub):
            val = getattr(sub, f.name)
            if f.name == "link_outages":
                cp[section][f.name] = _fmt_outages(val)
            elif val is None:
                cp[section][f.name] = "none"
            elif isinstance(val, tuple):
                cp[section][f.name] = ",".join(str(x) for x in val)
            else:
                cp[section][f.name] = str(val)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save(config: ScenarioConfig, path) -> None:
    with open(path, "w") as f:
        f.write(to_ini(config))


def _apply_section(sub, section: str, items: dict):
    known = {f.name for f in fields(sub)}
    updates = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigurationError(f"{section}.{key}: unknown config key")
        if key == "link_outages":
            updates[key] = _parse_outages(raw)
        elif (section, key) in _OPTIONAL_FLOATS:
            updates[key] = None if raw.strip().lower() in ("none", "") else float(raw)
        elif (section, key) in _OPTIONAL_STRS:
            updates[key] = None if raw.strip().lower() in ("none", "") else raw.strip()
        else:
            updates[key] = _parse_value(raw, getattr(sub, key))
    return replace(sub, **updates)


def from_ini(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    base = base or ScenarioConfig()
    cp = configparser.ConfigParser()
    cp.read_string(text)
    updates = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigurationError(f"{section}: unknown config section")
        attr = _SECTIONS[section]
        updates[attr] = _apply_section(getattr(base, attr), section, dict(cp[section]))
    return replace(base, **updates)


def load(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    with open(path) as f:
        return from_ini(f.read(), base)


def apply_overrides(config: ScenarioConfig, overrides: list[str]) -> ScenarioConfig:
    """Apply 'section.key=value' strings on top of a config."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"--set {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigurationError(f"{section}: unknown config section")
        attr = _SECTIONS[section]
        config = replace(config, **{attr: _apply_section(getattr(config, attr), section, {name: value})})
    return config


def validate(config: ScenarioConfig) -> list[str]:
    """Cross-field checks. Returns warning diagnostics; raises
    ConfigurationError (with field names) on hard errors."""
    errors = []
    if config.engine.t_sim_s <= config.engine.warmup_s:
        errors.append("engine.t_sim_s: must exceed engine.warmup_s")
    if config.engine.buffer_packets < 1:
        errors.append("engine.buffer_packets: must be >= 1")
    if config.engine.ttl_hops < 1:
        errors.append("engine.ttl_hops: must be >= 1")
    if config.engine.table_epoch_s <= 0:
        errors.append("engine.table_epoch_s: must be > 0")
    if config.engine.topology_step_s <= 0:
        errors.append("engine.topology_step_s: must be > 0")
    if config.traffic.lambda0 <= 0:
        errors.append("traffic.lambda0: must be > 0")
    if config.traffic.n_flows < 1:
        errors.append("traffic.n_flows: must be >= 1")
    if not config.run.etas or any(e <= 0 for e in config.run.etas):
        errors.append("run.etas: must be non-empty and positive")
    if config.run.n_seeds < 1:
        errors.append("run.n_seeds: must be >= 1")
    bad = [p for p in config.run.policies if p not in ("table", "rl", "hybrid")]
    if bad:
        errors.append(f"run.policies: unknown policies {bad}")
    if errors:
        raise ConfigurationError("; ".join(errors))

    warnings = []
    c = config.constellation
    intra_gap_deg = 360.0 / c.sats_per_plane
    intra_km = 2.0 * c.radius_km * math.sin(math.radians(intra_gap_deg / 2.0))
    if intra_km >= config.links.isl_max_km:
        warnings.append(
            f"intra-plane spacing {intra_km:.0f} km >= isl_max_km "
            f"{config.links.isl_max_km:.0f} km: intra-plane links will never activate"
        )
    return warnings


def run_seed(config: ScenarioConfig, run_index: int) -> int:
    return config.run.master_seed + run_index


def ground_seed(config: ScenarioConfig) -> int:
    return config.run.master_seed + GROUND_SEED_OFFSET
