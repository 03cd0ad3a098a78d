"""Routing policies under comparison: pure greedy Q-routing, and the hybrid
policy that follows the offline table under nominal conditions and falls back
to the Q-agent when the table's next hop is down or congested.

The engine builds an Observation per decision; port availability in it is
already restricted to links the packet may actually use (a feeder port is
offered only when the attached ground node is the packet's destination).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import dql, table_router
from .topology import PORTS, PORT_INDEX


class PortView(NamedTuple):
    active: bool
    queue_len: int
    delay_norm: float


@dataclass(frozen=True)
class Observation:
    current: object                 # SatId holding the packet
    dest: str                       # ground destination node_id
    ports: tuple                    # 6 PortViews in PORTS order
    dest_lat_deg: float
    dest_lon_deg: float
    buffer_packets: int
    dest_onehot: np.ndarray | None = None


@dataclass(frozen=True)
class Decision:
    action: str                     # port label
    mode: str                       # "table" | "fallback" | "pure-rl"
    cost_marker: str                # "lookup" | "q-eval"


def state_vector(obs: Observation) -> np.ndarray:
    ports = [
        (pv.active, pv.queue_len / obs.buffer_packets, pv.delay_norm)
        for pv in obs.ports
    ]
    return dql.encode_state(ports, obs.dest_lat_deg, obs.dest_lon_deg, obs.dest_onehot)


def feasible_mask(obs: Observation, exclude: str | None = None) -> np.ndarray:
    mask = np.array([pv.active for pv in obs.ports], dtype=bool)
    if exclude is not None:
        mask[PORT_INDEX[exclude]] = False
    return mask


def pure_rl_decide(agent: dql.QAgent, obs: Observation) -> Decision | None:
    """Greedy masked argmax of Q; None when no action is feasible."""
    mask = feasible_mask(obs)
    if not mask.any():
        return None
    action = agent.act_greedy(state_vector(obs), mask)
    return Decision(PORTS[action], "pure-rl", "q-eval")


def fallback_trigger(next_hop_link_active: bool, next_hop_queue: int,
                     buffer_packets: int) -> bool:
    """True iff the table next hop is unusable: link down, or the local output
    queue toward it is filled beyond 70% (strictly)."""
    if buffer_packets <= 0:
        raise ValueError("buffer_packets: must be > 0")
    if not next_hop_link_active:
        return True
    return next_hop_queue / buffer_packets > 0.7


def hybrid_decide(table: table_router.RoutingTable, agent: dql.QAgent,
                  obs: Observation) -> Decision | None:
    """Table next hop when it is routable and uncongested, otherwise a masked
    Q-argmax that never re-selects the rejected table port.

    Table-mode decisions never touch the Q-network.
    """
    port = table_router.lookup(table, obs.current, obs.dest)
    if port is not table_router.NO_ROUTE:
        pv = obs.ports[PORT_INDEX[port]]
        if not fallback_trigger(pv.active, pv.queue_len, obs.buffer_packets):
            return Decision(port, "table", "lookup")
        mask = feasible_mask(obs, exclude=port)
    else:
        mask = feasible_mask(obs)
    if not mask.any():
        return None
    action = agent.act_greedy(state_vector(obs), mask)
    return Decision(PORTS[action], "fallback", "q-eval")


@dataclass
class DecisionCounters:
    decisions: int = 0
    table: int = 0
    fallback: int = 0
    pure_rl: int = 0
    table_lookups: int = 0
    q_evaluations: int = 0
    no_action: int = 0
    wall_time_s: float = 0.0

    def record(self, decision: Decision | None, elapsed_s: float = 0.0,
               looked_up: bool = False) -> None:
        self.decisions += 1
        self.wall_time_s += elapsed_s
        if looked_up:
            self.table_lookups += 1
        if decision is None:
            self.no_action += 1
            return
        if decision.cost_marker == "q-eval":
            self.q_evaluations += 1
        if decision.mode == "table":
            self.table += 1
        elif decision.mode == "fallback":
            self.fallback += 1
        else:
            self.pure_rl += 1


def count_decision_costs(counters: DecisionCounters) -> dict:
    """Summary of decision costs; p_fb is None when no decisions were made.
    Pure-RL runs have p_fb = 1 by definition of the mode."""
    out = {
        "table_lookups": counters.table_lookups,
        "q_evaluations": counters.q_evaluations,
        "p_fb": None,
    }
    if counters.decisions == 0:
        return out
    if counters.pure_rl > 0:
        out["p_fb"] = 1.0
    elif counters.table_lookups > 0:
        out["p_fb"] = counters.q_evaluations / counters.decisions
    else:
        out["p_fb"] = 0.0
    return out
