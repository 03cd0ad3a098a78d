"""Discrete-event simulation core: Poisson packet arrivals, per-port FIFO
queues with drop-tail, transmission/propagation scheduling, periodic topology
snapshots and table epochs, and metric accounting.

Event ordering at equal timestamps: topology-tick < table-rebuild <
tx-complete < packet-arrival < metrics-flush, then insertion order, so
decisions never see a stale topology at their own timestamp. The event loop
is strictly single-threaded per run; sweep-level parallelism runs whole
simulations concurrently.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import dql, policy as policy_mod, table_router, topology, traffic
from .config import AGENT_SEED_OFFSET, ScenarioConfig, ground_seed
from .orbits import GroundNode, SatId, generate_ground_nodes, propagate, read_ground_file
from .policy import DecisionCounters, Observation, PortView
from .topology import PORTS, PORT_INDEX

EVENT_PRIORITY = {
    "topology-tick": 0,
    "table-rebuild": 1,
    "tx-complete": 2,
    "packet-arrival": 3,
    "metrics-flush": 4,
}

DROP_REASONS = ("overflow", "ttl", "no-route")

CSV_COLUMNS = [
    "policy", "eta", "seed", "generated", "delivered", "dropped_overflow",
    "dropped_ttl", "dropped_noroute", "pdr", "mean_delay_ms", "p50_delay_ms",
    "p95_delay_ms", "mean_hops", "throughput_pps", "p_fb", "table_lookups",
    "q_evals", "wall_time_s",
]


class SimulationError(RuntimeError):
    pass


class AggregationError(ValueError):
    pass


def nearest_rank(samples, pct: float) -> float:
    """Nearest-rank percentile over a sequence (not interpolated)."""
    if len(samples) == 0:
        return float("nan")
    s = sorted(samples)
    k = max(1, math.ceil(pct / 100.0 * len(s)))
    return s[k - 1]


@dataclass
class PortQueue:
    """Drop-tail FIFO for one output port; at most one packet in service."""
    owner: object
    port: str | None
    capacity: int
    items: deque = field(default_factory=deque)   # (packet, decided_next)
    busy: bool = False
    kicking: bool = False

    def __len__(self):
        return len(self.items)


def enqueue(pq: PortQueue, packet, decided_next) -> str:
    """Drop-tail append: accepted while the FIFO is below capacity."""
    if len(pq.items) >= pq.capacity:
        return "dropped"
    pq.items.append((packet, decided_next))
    return "accepted"


@dataclass
class MetricsReport:
    policy: str
    eta: float
    seed: int
    generated: int
    delivered: int
    dropped: dict
    in_flight: int
    pdr: float
    delay_samples_ms: list
    mean_delay_ms: float
    p50_delay_ms: float
    p95_delay_ms: float
    mean_hops: float
    throughput_pps: float
    p_fb: float | None
    table_lookups: int
    q_evals: int
    decisions: int
    decision_wall_s: float

    def csv_row(self, wall_time_s: float) -> list[str]:
        def fmt(x):
            if x is None or (isinstance(x, float) and math.isnan(x)):
                return "nan"
            if isinstance(x, float):
                return repr(x)   # shortest round-trip, exact on re-parse
            return str(x)
        return [
            self.policy, fmt(self.eta), str(self.seed), str(self.generated),
            str(self.delivered), str(self.dropped.get("overflow", 0)),
            str(self.dropped.get("ttl", 0)), str(self.dropped.get("no-route", 0)),
            fmt(self.pdr), fmt(self.mean_delay_ms), fmt(self.p50_delay_ms),
            fmt(self.p95_delay_ms), fmt(self.mean_hops), fmt(self.throughput_pps),
            fmt(self.p_fb), str(self.table_lookups), str(self.q_evals),
            fmt(wall_time_s),
        ]


class _Pending(dict):
    """packet_id -> (state, action, queue_len_at_decision, deciding_satellite)."""


class Simulation:
    """One seeded run of one policy at one input rate."""

    def __init__(self, scenario: ScenarioConfig, policy: str, eta: float, seed: int,
                 agent: dql.QAgent | None = None, trace_path=None,
                 step_budget: int | None = None):
        if policy not in ("table", "rl", "hybrid", "rl-train"):
            raise SimulationError(f"policy: unknown policy {policy!r}")
        if policy in ("rl", "hybrid", "rl-train") and agent is None:
            raise SimulationError(f"policy {policy!r} requires a Q-agent")
        self.sc = scenario
        self.policy = policy
        self.eta = eta
        self.seed = seed
        self.agent = agent
        self.step_budget = step_budget
        self._stop = False
        # independent-parameters ablation: per-satellite copies of the loaded
        # network that diverge through their own updates. Pretraining always
        # trains the shared network.
        self._independent = (agent is not None and not agent.cfg.shared_params
                             and policy != "rl-train")
        self._sat_agents: dict = {}

        eng = scenario.engine
        self.buffer_b = eng.buffer_packets
        self.ttl = eng.ttl_hops
        self.t_sim = eng.t_sim_s
        self.warmup = eng.warmup_s
        self.delay_scale_s = (agent.cfg.delay_scale_ms / 1000.0) if agent else 0.025

        # ground segment is scenario-level (same geography across seeds)
        if scenario.ground.ground_file:
            self.ground_nodes = read_ground_file(scenario.ground.ground_file)
        else:
            self.ground_nodes = generate_ground_nodes(
                scenario.ground.n_gateways, scenario.ground.n_user_terminals,
                ground_seed(scenario), scenario.ground.max_latitude_deg,
                scenario.ground.min_separation_deg)
        self.ground_by_id = {g.node_id: g for g in self.ground_nodes}
        self.ground_order = sorted(self.ground_by_id)
        self._ground_index = {gid: i for i, gid in enumerate(self.ground_order)}
        gateways = [g for g in self.ground_nodes if g.kind == "gateway"]
        uts = [g for g in self.ground_nodes if g.kind == "user-terminal"]

        self.flows = traffic.pair_flows(gateways, uts, scenario.traffic.n_flows,
                                        seed, scenario.traffic.lambda0)
        self.flow_rngs = [np.random.default_rng(seed + f.flow_id) for f in self.flows]

        # event loop state
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.snapshot: topology.TopologySnapshot | None = None
        self.table: table_router.RoutingTable | None = None
        self._weight_sums: dict = {}
        self._weight_counts: dict = {}

        self.port_queues: dict = {}     # SatId -> {port: PortQueue}
        self.ground_queues: dict = {g.node_id: PortQueue(g.node_id, None, 0) for g in self.ground_nodes}

        self.counters = DecisionCounters()
        self.pending = _Pending()
        self._pid = 0
        self.generated = 0
        self.delivered = 0
        self.dropped = {r: 0 for r in DROP_REASONS}
        self.live_metric: set = set()
        self.delay_samples_ms: list = []
        self.hop_samples: list = []
        self.train_reward_sum = 0.0
        self.train_reward_n = 0
        self._trace = open(trace_path, "w") if trace_path else None
        self._last_event_time = 0.0

    # -- scheduling -----------------------------------------------------------

    def _push(self, t: float, kind: str, payload=None):
        self._seq += 1
        heapq.heappush(self._heap, (t, EVENT_PRIORITY[kind], self._seq, kind, payload))

    # -- topology -------------------------------------------------------------

    def _rebuild_snapshot(self, t: float):
        sc = self.sc
        snap_t = 0.0 if sc.engine.freeze_topology else t
        positions = propagate(sc.constellation, snap_t)
        self.snapshot = topology.snapshot(
            positions, self.ground_nodes, sc.links, snap_t,
            config=sc.constellation, outages=sc.engine.link_outages)
        for sid in self.snapshot.sat_links:
            if sid not in self.port_queues:
                self.port_queues[sid] = {
                    p: PortQueue(sid, p, self.buffer_b) for p in PORTS}
        if self.policy in ("table", "hybrid"):
            for link in self.snapshot.links:
                key = (link.src, link.dst)
                d = topology.link_delay(link, 0, sc.links)
                self._weight_sums[key] = self._weight_sums.get(key, 0.0) + d
                self._weight_counts[key] = self._weight_counts.get(key, 0) + 1

    def _on_topology_tick(self, t):
        self._rebuild_snapshot(t)
        # strand recovery: packets queued on ports whose decided link vanished
        for sid, ports in self.port_queues.items():
            for port, pq in ports.items():
                if not pq.items:
                    continue
                link = self.snapshot.link_from(sid, port)
                keep = deque()
                stranded = []
                for entry in pq.items:
                    if link is not None and entry[1] == link.dst:
                        keep.append(entry)
                    else:
                        stranded.append(entry[0])
                if stranded:
                    pq.items = keep
                    for pkt in stranded:
                        self._decide_and_enqueue(pkt, sid)
        for sid, ports in self.port_queues.items():
            for port in PORTS:
                self._kick_port(sid, port)
        for gid in self.ground_queues:
            self._kick_ground(gid)

    def _on_table_rebuild(self, t):
        if self.policy not in ("table", "hybrid"):
            return
        if self._weight_counts:
            weights = {k: self._weight_sums[k] / self._weight_counts[k]
                       for k in self._weight_sums}
        else:
            weights = table_router.mean_link_delays([self.snapshot], self.sc.links)
        self.table = table_router.build_table(self.snapshot, weights)
        self._weight_sums = {}
        self._weight_counts = {}

    # -- observation / decisions ----------------------------------------------

    def _agent_for(self, sid: SatId) -> dql.QAgent:
        if not self._independent:
            return self.agent
        agent = self._sat_agents.get(sid)
        if agent is None:
            cap = max(100, self.agent.cfg.replay_capacity // max(1, len(self.port_queues)))
            agent = dql.QAgent(self.agent.cfg, seed=self.seed + hash(sid) % 100_003,
                               dest_dim=self.agent.dest_dim)
            agent.net.copy_from(self.agent.net)
            agent.target.copy_from(self.agent.net)
            agent.replay = dql.ReplayBuffer(cap)
            self._sat_agents[sid] = agent
        return agent

    def _observe(self, sid: SatId, dest: str) -> Observation:
        links = self.snapshot.sat_links.get(sid, {})
        views = []
        for port in PORTS:
            link = links.get(port)
            active = link is not None
            if active and port in ("UT", "GW"):
                active = link.dst == dest
            if active:
                qlen = len(self.port_queues[sid][port])
                dnorm = topology.link_delay(link, 0, self.sc.links) / self.delay_scale_s
                views.append(PortView(True, qlen, dnorm))
            else:
                views.append(PortView(False, 0, 1.0))
        g = self.ground_by_id[dest]
        onehot = None
        if self.agent is not None and self.agent.cfg.dest_encoding == "onehot":
            onehot = np.zeros(len(self.ground_order))
            onehot[self._ground_index[dest]] = 1.0
        return Observation(sid, dest, tuple(views), g.latitude_deg, g.longitude_deg,
                           self.buffer_b, onehot)

    def _decide(self, pkt: traffic.Packet, sid: SatId):
        obs = self._observe(sid, pkt.dst)
        t0 = time.perf_counter()
        if self.policy == "table":
            port = table_router.lookup(self.table, sid, pkt.dst)
            decision = None
            if port is not table_router.NO_ROUTE and obs.ports[PORT_INDEX[port]].active:
                decision = policy_mod.Decision(port, "table", "lookup")
        elif self.policy == "rl":
            decision = policy_mod.pure_rl_decide(self._agent_for(sid), obs)
        elif self.policy == "hybrid":
            decision = policy_mod.hybrid_decide(self.table, self._agent_for(sid), obs)
        else:  # rl-train
            mask = policy_mod.feasible_mask(obs)
            if not mask.any():
                decision = None
            else:
                action = self.agent.act_train(policy_mod.state_vector(obs), mask)
                decision = policy_mod.Decision(PORTS[action], "pure-rl", "q-eval")
            if self.step_budget is not None and self.agent.steps >= self.step_budget:
                self._stop = True
        elapsed = time.perf_counter() - t0
        self.counters.record(decision, elapsed,
                             looked_up=self.policy in ("table", "hybrid"))
        return decision, obs

    def _capture(self, decision) -> bool:
        if self.policy == "rl-train":
            return True
        if self.policy == "hybrid":
            return decision.mode == "fallback"
        if self.policy == "rl":
            return self.sc.engine.rl_online_updates
        return False

    def _decide_and_enqueue(self, pkt: traffic.Packet, sid: SatId):
        self.pending.pop(pkt.packet_id, None)  # re-decides void the old action
        decision, obs = self._decide(pkt, sid)
        if decision is None:
            self._drop(pkt, "no-route")
            return
        port = decision.action
        pq = self.port_queues[sid][port]
        link = self.snapshot.link_from(sid, port)
        if self._capture(decision):
            self.pending[pkt.packet_id] = (
                policy_mod.state_vector(obs), PORT_INDEX[port], len(pq), sid)
        if enqueue(pq, pkt, link.dst) == "dropped":
            self._complete_pending(pkt, terminal=True, delivered=False)
            self._drop(pkt, "overflow")
            return
        self._kick_port(sid, port)

    # -- service --------------------------------------------------------------

    def _kick_port(self, sid: SatId, port: str):
        pq = self.port_queues[sid][port]
        if pq.kicking:
            return
        pq.kicking = True
        try:
            while not pq.busy and pq.items:
                pkt, nxt = pq.items[0]
                link = self.snapshot.link_from(sid, port)
                if link is not None and link.dst == nxt:
                    pq.items.popleft()
                    pq.busy = True
                    tx = topology.transmission_time_s(link, self.sc.links)
                    prop = topology.propagation_time_s(link, self.sc.links)
                    self._push(self.now + tx, "tx-complete", (sid, port, pkt, nxt, prop))
                else:
                    pq.items.popleft()
                    self._decide_and_enqueue(pkt, sid)
        finally:
            pq.kicking = False

    def _kick_ground(self, gid: str):
        pq = self.ground_queues[gid]
        if pq.busy or not pq.items:
            return
        link = self.snapshot.ground_uplinks.get(gid)
        if link is None:
            return  # unattached; source queue is unbounded and waits
        pkt = pq.items.popleft()
        pq.busy = True
        tx = topology.transmission_time_s(link, self.sc.links)
        prop = topology.propagation_time_s(link, self.sc.links)
        self._push(self.now + tx, "tx-complete", (gid, None, pkt, link.dst, prop))

    def _on_tx_complete(self, node, port, pkt, nxt, prop):
        if isinstance(node, SatId):
            pq = self.port_queues[node][port]
            pq.busy = False
            link = self.snapshot.link_from(node, port)
            if link is not None and link.dst == nxt:
                self._push(self.now + prop, "packet-arrival", ("hop", pkt, nxt))
            else:
                # link died mid-service: back to the queue head, re-decide now
                pq.items.appendleft((pkt, nxt))
            self._kick_port(node, port)
        else:
            pq = self.ground_queues[node]
            pq.busy = False
            link = self.snapshot.ground_uplinks.get(node)
            if link is not None and link.dst == nxt:
                self._push(self.now + prop, "packet-arrival", ("hop", pkt, nxt))
            else:
                pq.items.appendleft(pkt)
            self._kick_ground(node)

    # -- packet lifecycle -------------------------------------------------------

    def _on_new_packet(self, flow_idx: int):
        flow = self.flows[flow_idx]
        self._pid += 1
        pkt = traffic.Packet(
            packet_id=self._pid, flow_id=flow.flow_id, src=flow.src, dst=flow.dst,
            size_bits=self.sc.links.packet_len_bits, created_s=self.now,
            hop_log=[flow.src], metric=self.now >= self.warmup)
        if pkt.metric:
            self.generated += 1
            self.live_metric.add(pkt.packet_id)
        self.ground_queues[flow.src].items.append(pkt)
        self._kick_ground(flow.src)
        t_next = traffic.next_arrival(flow, self.eta, self.now, self.flow_rngs[flow_idx])
        if t_next < self.t_sim:
            self._push(t_next, "packet-arrival", ("new", flow_idx))

    def _on_packet_at_satellite(self, pkt: traffic.Packet, sid: SatId):
        pkt.hop_log.append(sid)
        if pkt.hops >= self.ttl:
            self._complete_pending(pkt, terminal=True, delivered=False)
            self._drop(pkt, "ttl")
            return
        if pkt.packet_id in self.pending:
            obs = self._observe(sid, pkt.dst)
            self._complete_pending(
                pkt, terminal=False, delivered=False,
                next_state=policy_mod.state_vector(obs),
                feasible_next=policy_mod.feasible_mask(obs))
        self._decide_and_enqueue(pkt, sid)

    def _on_packet_at_ground(self, pkt: traffic.Packet, gid: str):
        pkt.hop_log.append(gid)
        if gid == pkt.dst:
            pkt.delivered_s = self.now
            self._complete_pending(pkt, terminal=True, delivered=True)
            if pkt.metric:
                self.delivered += 1
                self.live_metric.discard(pkt.packet_id)
                self.delay_samples_ms.append((pkt.delivered_s - pkt.created_s) * 1000.0)
                self.hop_samples.append(pkt.hops)
            self._trace_packet(pkt, "delivered")
        else:
            # attachment flipped while in flight; ground nodes only forward
            # back to their attached satellite
            self._complete_pending(pkt, terminal=True, delivered=False)
            self.ground_queues[gid].items.append(pkt)
            self._kick_ground(gid)

    def _drop(self, pkt: traffic.Packet, reason: str):
        pkt.dropped_reason = reason
        if pkt.metric:
            self.dropped[reason] += 1
            self.live_metric.discard(pkt.packet_id)
        self._trace_packet(pkt, f"dropped:{reason}")

    def _complete_pending(self, pkt, terminal, delivered,
                          next_state=None, feasible_next=None):
        rec = self.pending.pop(pkt.packet_id, None)
        if rec is None:
            return
        state, action, qlen, sid = rec
        agent = self.agent if self.policy == "rl-train" else self._agent_for(sid)
        r = dql.reward(qlen, pkt.hops, delivered, agent.cfg)
        self.train_reward_sum += r
        self.train_reward_n += 1
        if next_state is None:
            next_state = np.zeros_like(state)
        if feasible_next is None:
            feasible_next = np.zeros(dql.N_ACTIONS, dtype=bool)
        agent.observe(dql.Transition(
            state, action, r, next_state, terminal, feasible_next))

    def _trace_packet(self, pkt, outcome):
        if self._trace is None:
            return
        self._trace.write(json.dumps({
            "packet_id": pkt.packet_id, "flow_id": pkt.flow_id,
            "src": pkt.src, "dst": pkt.dst, "created_s": pkt.created_s,
            "outcome": outcome, "time_s": self.now, "hops": pkt.hops,
            "hop_log": [str(h) for h in pkt.hop_log],
        }) + "\n")

    # -- main loop ---------------------------------------------------------------

    def run(self) -> MetricsReport:
        eng = self.sc.engine
        step = eng.topology_step_s
        n_ticks = int(math.floor(self.t_sim / step))
        if eng.freeze_topology:
            self._push(0.0, "topology-tick")
        else:
            for k in range(n_ticks + 1):
                self._push(k * step, "topology-tick")
        if self.policy in ("table", "hybrid"):
            n_epochs = int(math.floor(self.t_sim / eng.table_epoch_s))
            for k in range(n_epochs + 1):
                self._push(k * eng.table_epoch_s, "table-rebuild")
        for i, flow in enumerate(self.flows):
            t0 = traffic.next_arrival(flow, self.eta, 0.0, self.flow_rngs[i])
            if t0 < self.t_sim:
                self._push(t0, "packet-arrival", ("new", i))
        self._push(self.t_sim, "metrics-flush")

        while self._heap and not self._stop:
            t, _, _, kind, payload = heapq.heappop(self._heap)
            if t > self.t_sim:
                break
            if t < self._last_event_time - 1e-12:
                raise SimulationError("event clock went backwards")
            self._last_event_time = t
            self.now = t
            if kind == "topology-tick":
                self._on_topology_tick(t)
            elif kind == "table-rebuild":
                self._on_table_rebuild(t)
            elif kind == "tx-complete":
                self._on_tx_complete(*payload)
            elif kind == "packet-arrival":
                if payload[0] == "new":
                    self._on_new_packet(payload[1])
                else:
                    _, pkt, node = payload
                    if isinstance(node, SatId):
                        self._on_packet_at_satellite(pkt, node)
                    else:
                        self._on_packet_at_ground(pkt, node)
            elif kind == "metrics-flush":
                break
        if self._trace is not None:
            self._trace.close()
        return self._report()

    def _report(self) -> MetricsReport:
        in_flight = len(self.live_metric)
        total_dropped = sum(self.dropped.values())
        if self.generated != self.delivered + total_dropped + in_flight:
            raise SimulationError(
                f"conservation violated: {self.generated} != "
                f"{self.delivered} + {total_dropped} + {in_flight}")
        costs = policy_mod.count_decision_costs(self.counters)
        measured = self.t_sim - self.warmup
        delays = self.delay_samples_ms
        return MetricsReport(
            policy=self.policy, eta=self.eta, seed=self.seed,
            generated=self.generated, delivered=self.delivered,
            dropped=dict(self.dropped), in_flight=in_flight,
            pdr=(self.delivered / self.generated) if self.generated else float("nan"),
            delay_samples_ms=list(delays),
            mean_delay_ms=float(np.mean(delays)) if delays else float("nan"),
            p50_delay_ms=nearest_rank(delays, 50.0),
            p95_delay_ms=nearest_rank(delays, 95.0),
            mean_hops=float(np.mean(self.hop_samples)) if self.hop_samples else float("nan"),
            throughput_pps=self.delivered / measured if measured > 0 else float("nan"),
            p_fb=costs["p_fb"],
            table_lookups=costs["table_lookups"],
            q_evals=costs["q_evaluations"],
            decisions=self.counters.decisions,
            decision_wall_s=self.counters.wall_time_s,
        )


def run(scenario: ScenarioConfig, policy: str, eta: float, seed: int,
        agent: dql.QAgent | None = None, trace_path=None) -> MetricsReport:
    return Simulation(scenario, policy, eta, seed, agent, trace_path).run()


def make_agent(scenario: ScenarioConfig, seed: int | None = None) -> dql.QAgent:
    """Fresh agent sized for the scenario's destination encoding."""
    if seed is None:
        seed = scenario.run.master_seed + AGENT_SEED_OFFSET
    dest_dim = dql.GEO_DEST_DIM
    if scenario.agent.dest_encoding == "onehot":
        dest_dim = scenario.ground.n_gateways + scenario.ground.n_user_terminals
    return dql.QAgent(scenario.agent, seed, dest_dim)


def aggregate(reports: list[MetricsReport]) -> dict:
    """Mean and population std per metric over reports that differ only by
    seed; delay percentiles are pooled over all samples."""
    if not reports:
        raise AggregationError("aggregate: no reports")
    key = {(r.policy, r.eta) for r in reports}
    if len(key) != 1:
        raise AggregationError(f"aggregate: heterogeneous scenarios {sorted(key)}")
    metrics = ["pdr", "mean_delay_ms", "mean_hops", "throughput_pps", "p_fb"]
    out = {"policy": reports[0].policy, "eta": reports[0].eta, "n_runs": len(reports)}
    for m in metrics:
        vals = [getattr(r, m) for r in reports]
        vals = [v for v in vals if v is not None and not math.isnan(v)]
        if vals:
            out[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        else:
            out[m] = {"mean": float("nan"), "std": float("nan")}
    pooled = [d for r in reports for d in r.delay_samples_ms]
    out["delay_p50_ms"] = nearest_rank(pooled, 50.0)
    out["delay_p95_ms"] = nearest_rank(pooled, 95.0)
    return out
