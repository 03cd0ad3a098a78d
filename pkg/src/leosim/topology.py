"""Time-varying network graph built from geometry plus the per-link /
per-path delay model (propagation + transmission + queueing).

A snapshot is immutable once built; queue state is owned by the engine and
passed in by value where delays need it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .orbits import (
    ConstellationConfig,
    GroundNode,
    SatellitePosition,
    SatId,
    chord_distance,
    elevations_deg,
    walker_neighbors,
)

# Action/port universe, fixed order (also the Q-network output order).
PORTS = ("UT", "GW", "E", "W", "Fwd", "Bwd")
PORT_INDEX = {p: i for i, p in enumerate(PORTS)}
ISL_PORTS = ("E", "W", "Fwd", "Bwd")


class InvalidLinkError(ValueError):
    pass


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class DelayParams:
    c_eff_m_s: float = 3.0e8
    packet_len_bits: int = 9600          # 1200 B
    isl_rate_bps: float = 1.0e9
    feeder_rate_bps: float = 2.0e9
    isl_max_km: float = 2500.0           # adjusted default; literal 2000 via config
    min_elevation_deg: float = 10.0
    service_rate_override_pps: float | None = None

    def __post_init__(self):
        for name in ("c_eff_m_s", "packet_len_bits", "isl_rate_bps", "feeder_rate_bps",
                     "isl_max_km", "min_elevation_deg"):
            if getattr(self, name) <= 0:
                raise InvalidLinkError(f"{name}: must be > 0")
        if self.service_rate_override_pps is not None and self.service_rate_override_pps <= 0:
            raise InvalidLinkError("service_rate_override_pps: must be > 0 or unset")


@dataclass(frozen=True)
class Link:
    src: object                  # SatId or ground node_id str
    dst: object
    kind: str                    # "ISL" | "feeder"
    distance_km: float
    rate_bps: float
    port: str | None             # UT/GW/E/W/Fwd/Bwd for satellite sources, None for ground


def transmission_time_s(link: Link, params: DelayParams) -> float:
    """Per-packet service time on a link. The packets/s override applies to
    satellite output ports only; ground uplinks keep the literal feeder rate."""
    if params.service_rate_override_pps is not None and link.port is not None:
        return 1.0 / params.service_rate_override_pps
    if link.rate_bps <= 0:
        raise InvalidLinkError(f"link {link.src}->{link.dst}: zero rate")
    return params.packet_len_bits / link.rate_bps


def propagation_time_s(link: Link, params: DelayParams) -> float:
    return link.distance_km * 1000.0 / params.c_eff_m_s


def link_delay(link: Link, queue_len: int, params: DelayParams) -> float:
    """Instantaneous per-packet delay: propagation + transmission + waiting
    behind queue_len packets already in the FIFO."""
    if queue_len < 0:
        raise InvalidLinkError("queue_len: must be >= 0")
    tx = transmission_time_s(link, params)
    return propagation_time_s(link, params) + tx + queue_len * tx


def path_delay(path: list[Link], params: DelayParams,
               queue_lengths: dict | None = None) -> float:
    """End-to-end delay: sum of link delays along a connected path."""
    total = 0.0
    prev_dst = None
    for link in path:
        if prev_dst is not None and link.src != prev_dst:
            raise PathError(f"disconnected path at {prev_dst} -> {link.src}")
        q = queue_lengths.get((link.src, link.port), 0) if queue_lengths else 0
        total += link_delay(link, q, params)
        prev_dst = link.dst
    return total


@dataclass(frozen=True)
class TopologySnapshot:
    time_s: float
    nodes: frozenset
    links: tuple[Link, ...]
    sat_links: dict         # SatId -> {port: Link}
    ground_uplinks: dict    # ground node_id -> Link (to attached satellite)
    attached_sat: dict      # ground node_id -> SatId
    sat_positions: dict = field(default_factory=dict)   # SatId -> position (km)

    def link_from(self, node, port=None) -> Link | None:
        if isinstance(node, SatId):
            return self.sat_links.get(node, {}).get(port)
        return self.ground_uplinks.get(node)


def snapshot(positions: list[SatellitePosition], ground: list[GroundNode],
             params: DelayParams, t: float,
             config: ConstellationConfig | None = None,
             outages: tuple = ()) -> TopologySnapshot:
    """Build G(t): grid ISLs active below the distance threshold, feeder links
    for the highest-elevation visible pairings (one ground node per satellite
    feeder, one satellite per ground node).

    `outages` is an optional sequence of (src, dst, t_start, t_end) windows;
    matching links are suppressed in either direction while t is inside the
    window.
    """
    if config is None:
        planes = 1 + max(p.sat_id.plane for p in positions)
        sats_per_plane = 1 + max(p.sat_id.idx for p in positions)
        config = ConstellationConfig(planes=planes, sats_per_plane=sats_per_plane)

    pos_by_id = {p.sat_id: p.position_km for p in positions}
    sat_order = sorted(pos_by_id)

    def out(a, b):
        for src, dst, t0, t1 in outages:
            if t0 <= t < t1 and {a, b} == {src, dst}:
                return True
        return False

    links: list[Link] = []
    sat_links: dict = {sid: {} for sid in sat_order}

    for sid in sat_order:
        nbrs = walker_neighbors(sid, config)
        for port in ISL_PORTS:
            nid = nbrs[port]
            if nid == sid or nid not in pos_by_id:
                continue
            d = chord_distance(pos_by_id[sid], pos_by_id[nid])
            if d < params.isl_max_km and not out(sid, nid):
                link = Link(sid, nid, "ISL", d, params.isl_rate_bps, port)
                links.append(link)
                sat_links[sid][port] = link

    # Feeder attachment: greedy over candidate pairs by descending elevation,
    # deterministic tie-break on ids; one feeder per satellite, one per ground node.
    ground_uplinks: dict = {}
    attached_sat: dict = {}
    if ground:
        g_sorted = sorted(ground, key=lambda g: g.node_id)
        g_pos = np.array([g.inertial_position_km(t) for g in g_sorted])
        s_pos = np.array([pos_by_id[sid] for sid in sat_order])
        elev = elevations_deg(g_pos, s_pos)
        candidates = []
        for gi, g in enumerate(g_sorted):
            for si, sid in enumerate(sat_order):
                if elev[gi, si] > params.min_elevation_deg and not out(g.node_id, sid):
                    candidates.append((-elev[gi, si], g.node_id, sid, gi, si))
        candidates.sort()
        sat_taken = set()
        for _, gid, sid, gi, si in candidates:
            if gid in attached_sat or sid in sat_taken:
                continue
            attached_sat[gid] = sid
            sat_taken.add(sid)
            g = g_sorted[gi]
            d = chord_distance(g_pos[gi], pos_by_id[sid])
            port = "GW" if g.kind == "gateway" else "UT"
            down = Link(sid, gid, "feeder", d, params.feeder_rate_bps, port)
            up = Link(gid, sid, "feeder", d, params.feeder_rate_bps, None)
            links.append(down)
            links.append(up)
            sat_links[sid][port] = down
            ground_uplinks[gid] = up

    nodes = frozenset(sat_order) | frozenset(g.node_id for g in ground)
    return TopologySnapshot(
        time_s=t,
        nodes=nodes,
        links=tuple(links),
        sat_links=sat_links,
        ground_uplinks=ground_uplinks,
        attached_sat=attached_sat,
        sat_positions=pos_by_id,
    )


def feasible_actions(node, snap: TopologySnapshot) -> set[str]:
    """Ports with a currently active outgoing link at a satellite."""
    if not isinstance(node, SatId):
        raise ValueError(f"feasible_actions: {node!r} is not a satellite")
    return set(snap.sat_links.get(node, {}))


def export_snapshot(snap: TopologySnapshot, path) -> None:
    """Debug dump: nodes then one line per link."""
    with open(path, "w") as f:
        f.write(f"# snapshot t={snap.time_s}\n")
        f.write(f"# nodes {len(snap.nodes)}\n")
        for node in sorted(snap.nodes, key=str):
            f.write(f"node {node}\n")
        for link in snap.links:
            f.write(
                f"link {link.src} {link.dst} {link.kind} {link.port or '-'} "
                f"{link.distance_km:.3f} {link.rate_bps:.0f}\n"
            )
