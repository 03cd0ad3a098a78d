"""Gateway<->user-terminal flow generation and Poisson packet arrivals.

Per-flow arrival rate is eta * lambda0; each flow carries its own RNG stream
so flows can be advanced independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .orbits import ConfigurationError, GroundNode

DEFAULT_PACKET_BITS = 9600


@dataclass(frozen=True)
class Flow:
    flow_id: int
    src: str
    dst: str
    base_rate_pps: float
    direction: str            # "GW->UT" | "UT->GW"


@dataclass
class Packet:
    packet_id: int
    flow_id: int
    src: str
    dst: str
    size_bits: int
    created_s: float
    hop_log: list = field(default_factory=list)
    delivered_s: float | None = None
    dropped_reason: str | None = None
    metric: bool = True

    @property
    def hops(self) -> int:
        """Links traversed so far."""
        return len(self.hop_log) - 1


def pair_flows(gateways: list[GroundNode], user_terminals: list[GroundNode],
               n_flows: int, rng_seed: int, lambda0: float = 2.0) -> list[Flow]:
    """Uniformly random GW-UT pairs, alternating direction, deterministic
    under the seed."""
    if n_flows < 1:
        raise ConfigurationError("n_flows: must be >= 1")
    if not gateways or not user_terminals:
        raise ConfigurationError("flows: need at least one gateway and one user terminal")
    rng = np.random.default_rng(rng_seed)
    flows = []
    for i in range(n_flows):
        gw = gateways[int(rng.integers(len(gateways)))]
        ut = user_terminals[int(rng.integers(len(user_terminals)))]
        if i % 2 == 0:
            flows.append(Flow(i, gw.node_id, ut.node_id, lambda0, "GW->UT"))
        else:
            flows.append(Flow(i, ut.node_id, gw.node_id, lambda0, "UT->GW"))
    return flows


def next_arrival(flow: Flow, eta: float, now: float, rng: np.random.Generator) -> float:
    """Next Poisson arrival time for the flow at rate eta * lambda0."""
    if eta <= 0:
        raise ConfigurationError("eta: must be > 0")
    if flow.base_rate_pps <= 0:
        raise ConfigurationError("lambda0: must be > 0")
    return now + rng.exponential(1.0 / (eta * flow.base_rate_pps))


def offered_load(eta: float, lambda0: float, n_flows: int) -> float:
    """Aggregate offered rate in packets/s."""
    if eta <= 0 or lambda0 <= 0 or n_flows <= 0:
        raise ConfigurationError("offered_load: all inputs must be positive")
    return eta * lambda0 * n_flows
