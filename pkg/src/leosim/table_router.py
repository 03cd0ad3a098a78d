"""Deterministic routing tables: offline Dijkstra over time-averaged link
delays, one shortest-path tree per ground destination.

Ground nodes never relay, so only satellite rows are tabulated; a ground
source always hands packets to its attached satellite.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .orbits import ConfigurationError, SatId
from .topology import DelayParams, Link, TopologySnapshot, link_delay

NO_ROUTE = None


def _node_key(node):
    # total order across SatId tuples and ground id strings
    return (isinstance(node, str), node)


@dataclass(frozen=True)
class RoutingTable:
    epoch_s: float
    next_hop: dict      # (current node, destination) -> port
    build_weights: dict  # (src, dst) -> seconds


def mean_link_delays(snapshots: list[TopologySnapshot], params: DelayParams) -> dict:
    """Zero-queue link delay averaged over the snapshots where each link is
    active, keyed by (src, dst)."""
    if not snapshots:
        raise ConfigurationError("mean_link_delays: need at least one snapshot")
    sums: dict = {}
    counts: dict = {}
    for snap in snapshots:
        for link in snap.links:
            key = (link.src, link.dst)
            sums[key] = sums.get(key, 0.0) + link_delay(link, 0, params)
            counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def dijkstra_to_dest(edges: list[tuple], weights: dict, dest) -> tuple[dict, dict]:
    """Single-destination shortest paths on a directed graph.

    edges: (src, dst) pairs; weights: (src, dst) -> cost. Returns
    (dist, next_node) over nodes that can reach dest. Ties broken toward the
    smaller next-hop node id so rebuilds are reproducible.
    """
    incoming: dict = {}
    for src, dst in edges:
        incoming.setdefault(dst, []).append(src)

    dist = {dest: 0.0}
    next_node: dict = {}
    heap = [(0.0, _node_key(dest), dest)]
    while heap:
        d, _, node = heapq.heappop(heap)
        if d > dist.get(node, float("inf")):
            continue
        for src in incoming.get(node, ()):
            w = weights.get((src, node))
            if w is None:
                continue
            cand = d + w
            cur = dist.get(src, float("inf"))
            if cand < cur or (cand == cur and _node_key(node) < _node_key(next_node.get(src))):
                dist[src] = cand
                next_node[src] = node
                heapq.heappush(heap, (cand, _node_key(src), src))
    return dist, next_node


def build_table(representative: TopologySnapshot, weights: dict) -> RoutingTable:
    """Next-hop table over the representative snapshot for every ground
    destination, weighted by the supplied mean link delays.

    Only links with a weight participate; satellite rows map (sat, dest) to
    the outgoing port of the first link on the minimum-weight path.
    """
    ground_dests = sorted({l.dst for l in representative.links
                           if not isinstance(l.dst, SatId)})
    # ground nodes do not relay: drop their outgoing links from the routing graph
    edges = [(l.src, l.dst) for l in representative.links
             if isinstance(l.src, SatId) and (l.src, l.dst) in weights]
    port_of = {(l.src, l.dst): l.port for l in representative.links if l.port is not None}

    next_hop: dict = {}
    for dest in ground_dests:
        _, nxt = dijkstra_to_dest(edges, weights, dest)
        for node, nbr in nxt.items():
            if isinstance(node, SatId):
                next_hop[(node, dest)] = port_of[(node, nbr)]
    used = {(l.src, l.dst) for l in representative.links}
    return RoutingTable(
        epoch_s=representative.time_s,
        next_hop=next_hop,
        build_weights={k: w for k, w in weights.items() if k in used},
    )


def lookup(table: RoutingTable, current, dest):
    """Constant-time next-hop port; NO_ROUTE when no entry exists."""
    return table.next_hop.get((current, dest), NO_ROUTE)


def dump_table(table: RoutingTable, path) -> None:
    with open(path, "w") as f:
        f.write(f"# routing table epoch={table.epoch_s}\n")
        for (cur, dest), port in sorted(table.next_hop.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
            f.write(f"{cur} {dest} {port}\n")
