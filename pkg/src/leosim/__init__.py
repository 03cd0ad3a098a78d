"""Packet-level discrete-event simulator for LEO constellation routing with
table, deep-Q, and hybrid table-with-Q-fallback policies."""

__version__ = "0.1.0"

from .config import ScenarioConfig, mini_preset, paper_preset
from .engine import MetricsReport, Simulation, aggregate, run
from .dql import AgentConfig, QAgent

__all__ = [
    "AgentConfig",
    "MetricsReport",
    "QAgent",
    "ScenarioConfig",
    "Simulation",
    "aggregate",
    "mini_preset",
    "paper_preset",
    "run",
]
