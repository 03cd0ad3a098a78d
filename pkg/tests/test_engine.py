import json
import math
from dataclasses import replace

import numpy as np
import pytest

from leosim import mini_preset
from leosim.config import GroundConfig, ScenarioConfig, TrafficConfig
from leosim.engine import (
    AggregationError,
    MetricsReport,
    PortQueue,
    Simulation,
    aggregate,
    enqueue,
    make_agent,
    nearest_rank,
    run,
)
from leosim.orbits import SatId, generate_ground_nodes, propagate, write_ground_file
from leosim import topology


def tiny_scenario(**engine_overrides):
    base = mini_preset()
    eng = replace(base.engine, t_sim_s=30.0, warmup_s=5.0, **engine_overrides)
    return replace(base, traffic=TrafficConfig(lambda0=2.0, n_flows=6), engine=eng)


def read_trace(path):
    with open(path) as f:
        return [json.loads(line) for line in f]


class TestEnqueue:
    def test_boundaries(self):
        pq = PortQueue(SatId(0, 0), "E", capacity=200)
        for i in range(199):
            assert enqueue(pq, f"p{i}", SatId(0, 1)) == "accepted"
        assert len(pq.items) == 199
        assert enqueue(pq, "p199", SatId(0, 1)) == "accepted"
        assert len(pq.items) == 200
        assert enqueue(pq, "p200", SatId(0, 1)) == "dropped"
        assert len(pq.items) == 200

    def test_drop_counter_in_sim(self):
        # buffer of 1 with a burst of arrivals produces overflow drops
        sc = tiny_scenario(buffer_packets=1)
        r = run(sc, "table", 1.2, 42)
        assert r.dropped["overflow"] > 0
        assert r.generated == r.delivered + sum(r.dropped.values()) + r.in_flight


class TestServeTiming:
    def test_delivered_delay_matches_path_delay(self):
        # frozen topology, one sparse flow, literal link rates: end-to-end
        # delay must equal the summed per-link (prop + tx) exactly
        base = mini_preset()
        sc = replace(
            base,
            traffic=TrafficConfig(lambda0=0.2, n_flows=1),
            links=replace(base.links, service_rate_override_pps=None),
            engine=replace(base.engine, t_sim_s=60.0, warmup_s=0.0,
                           freeze_topology=True, trace_log=True),
        )
        trace_path = None
        import tempfile, os
        fd, trace_path = tempfile.mkstemp(suffix=".jsonl")
        os.close(fd)
        sim = Simulation(sc, "table", 1.0, 42, trace_path=trace_path)
        report = sim.run()
        assert report.delivered > 0
        snap = sim.snapshot
        params = sc.links
        node_by_str = {str(n): n for n in snap.nodes}
        for rec in read_trace(trace_path):
            if rec["outcome"] != "delivered":
                continue
            hops = [node_by_str[h] for h in rec["hop_log"]]
            expected = 0.0
            for a, b in zip(hops, hops[1:]):
                if isinstance(a, SatId):
                    link = next(l for l in snap.sat_links[a].values() if l.dst == b)
                else:
                    link = snap.ground_uplinks[a]
                expected += (topology.propagation_time_s(link, params)
                             + topology.transmission_time_s(link, params))
            measured = (rec["time_s"] - rec["created_s"])
            assert measured == pytest.approx(expected, rel=1e-9)
        os.unlink(trace_path)

    def test_delay_at_least_propagation_bound(self, tmp_path):
        sc = tiny_scenario(trace_log=True, freeze_topology=True)
        trace = tmp_path / "t.jsonl"
        sim = Simulation(sc, "table", 0.5, 42, trace_path=str(trace))
        sim.run()
        snap = sim.snapshot
        node_by_str = {str(n): n for n in snap.nodes}
        checked = 0
        for rec in read_trace(trace):
            if rec["outcome"] != "delivered":
                continue
            hops = [node_by_str[h] for h in rec["hop_log"]]
            bound = 0.0
            for a, b in zip(hops, hops[1:]):
                if isinstance(a, SatId):
                    link = next(l for l in snap.sat_links[a].values() if l.dst == b)
                else:
                    link = snap.ground_uplinks[a]
                bound += topology.propagation_time_s(link, sc.links)
            assert rec["time_s"] - rec["created_s"] >= bound - 1e-12
            checked += 1
        assert checked > 0


class TestConservationAndDeterminism:
    def test_conservation_every_policy(self):
        sc = tiny_scenario()
        agent = make_agent(sc)
        for pol, ag in (("table", None), ("hybrid", agent), ("rl", make_agent(sc))):
            r = run(sc, pol, 0.8, 42, ag)
            assert r.generated == r.delivered + sum(r.dropped.values()) + r.in_flight

    def test_identical_seed_identical_report(self):
        sc = tiny_scenario()
        r1 = run(sc, "hybrid", 0.8, 42, make_agent(sc))
        r2 = run(sc, "hybrid", 0.8, 42, make_agent(sc))
        assert r1.csv_row(0.0) == r2.csv_row(0.0)
        assert r1.delay_samples_ms == r2.delay_samples_ms

    def test_different_seed_differs(self):
        sc = tiny_scenario()
        r1 = run(sc, "table", 0.8, 42)
        r2 = run(sc, "table", 0.8, 43)
        assert r1.generated != r2.generated or r1.delay_samples_ms != r2.delay_samples_ms


class TestWarmup:
    def test_warmup_packets_excluded(self, tmp_path):
        sc = tiny_scenario(trace_log=True)
        trace = tmp_path / "t.jsonl"
        sim = Simulation(sc, "table", 1.0, 42, trace_path=str(trace))
        report = sim.run()
        metric_created = [r["created_s"] for r in read_trace(trace)
                          if r["outcome"] == "delivered"]
        # trace covers all packets; delivered metric count only counts >= warmup
        n_metric_delivered = sum(1 for t in metric_created if t >= sc.engine.warmup_s)
        assert report.delivered == n_metric_delivered
        assert any(t < sc.engine.warmup_s for t in metric_created)


class TestTtl:
    def test_ttl_one_drops_everything(self):
        sc = tiny_scenario(ttl_hops=1)
        r = run(sc, "table", 0.5, 42)
        assert r.delivered == 0
        assert r.dropped["ttl"] > 0


class TestFlowBalance:
    def test_delivered_walks_are_connected(self, tmp_path):
        sc = tiny_scenario(trace_log=True)
        trace = tmp_path / "t.jsonl"
        sim = Simulation(sc, "hybrid", 1.0, 42, make_agent(sc), trace_path=str(trace))
        sim.run()
        flows = {f.flow_id: f for f in sim.flows}
        checked = 0
        for rec in read_trace(trace):
            if rec["outcome"] != "delivered":
                continue
            f = flows[rec["flow_id"]]
            assert rec["hop_log"][0] == f.src
            assert rec["hop_log"][-1] == f.dst
            # interior of the walk alternates ground/satellite legally:
            # ground only ever hands to a satellite
            for a, b in zip(rec["hop_log"], rec["hop_log"][1:]):
                if not a.startswith("S"):
                    assert b.startswith("S")
            checked += 1
        assert checked > 0


class TestOutageRecovery:
    def test_injected_outage_keeps_conservation(self):
        # kill a busy ISL mid-run; packets must re-decide, nothing lost
        sc = tiny_scenario(freeze_topology=False)
        base = run(sc, "table", 1.0, 42)
        sim0 = Simulation(sc, "table", 1.0, 42)
        sim0.run()
        # find a link that actually carried traffic by picking a mid-grid ISL
        sid = next(iter(sim0.snapshot.sat_links))
        nbr = sim0.snapshot.sat_links[sid]["E"].dst
        sc_out = replace(sc, engine=replace(
            sc.engine, link_outages=((sid, nbr, 10.0, 20.0),)))
        r = run(sc_out, "table", 1.0, 42)
        assert r.generated == r.delivered + sum(r.dropped.values()) + r.in_flight
        assert r.generated == base.generated  # arrivals unaffected by outage


class TestHybridEqualsTableWhenNominal:
    def test_frozen_uncongested_paths_identical(self, tmp_path):
        sc = tiny_scenario(freeze_topology=True, trace_log=True)
        ta, tb = tmp_path / "table.jsonl", tmp_path / "hybrid.jsonl"
        Simulation(sc, "table", 0.1, 42, trace_path=str(ta)).run()
        sim_h = Simulation(sc, "hybrid", 0.1, 42, make_agent(sc), trace_path=str(tb))
        rh = sim_h.run()
        assert rh.p_fb == 0.0
        assert rh.q_evals == 0
        paths_t = {r["packet_id"]: r["hop_log"] for r in read_trace(ta)}
        paths_h = {r["packet_id"]: r["hop_log"] for r in read_trace(tb)}
        assert paths_t == paths_h


class TestNearestRank:
    def test_oracle_sort_and_index(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            xs = list(rng.uniform(0, 100, size=n))
            for pct in (50.0, 95.0):
                got = nearest_rank(xs, pct)
                s = sorted(xs)
                k = max(1, math.ceil(pct / 100 * n))
                assert got == s[k - 1]

    def test_empty_is_nan(self):
        assert math.isnan(nearest_rank([], 50.0))


class TestAggregate:
    def _rep(self, policy="table", eta=0.5, seed=1, pdr=0.9, delays=(1.0, 2.0)):
        return MetricsReport(
            policy=policy, eta=eta, seed=seed, generated=10, delivered=9,
            dropped={"overflow": 1, "ttl": 0, "no-route": 0}, in_flight=0,
            pdr=pdr, delay_samples_ms=list(delays), mean_delay_ms=float(np.mean(delays)),
            p50_delay_ms=1.0, p95_delay_ms=2.0, mean_hops=4.0, throughput_pps=5.0,
            p_fb=0.0, table_lookups=10, q_evals=0, decisions=10, decision_wall_s=0.0)

    def test_single_report(self):
        out = aggregate([self._rep()])
        assert out["pdr"]["mean"] == 0.9
        assert out["pdr"]["std"] == 0.0

    def test_two_reports_mean(self):
        out = aggregate([self._rep(pdr=0.9, seed=1), self._rep(pdr=1.0, seed=2)])
        assert out["pdr"]["mean"] == pytest.approx(0.95)

    def test_pooled_percentiles_match_oracle(self):
        rng = np.random.default_rng(3)
        reps = [self._rep(seed=i, delays=tuple(rng.uniform(0, 50, size=20)))
                for i in range(4)]
        out = aggregate(reps)
        pooled = sorted(d for r in reps for d in r.delay_samples_ms)
        assert out["delay_p95_ms"] == pooled[max(1, math.ceil(0.95 * len(pooled))) - 1]

    def test_heterogeneous_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([self._rep(eta=0.5), self._rep(eta=1.0)])
        with pytest.raises(AggregationError):
            aggregate([])


class TestAblationToggles:
    def test_independent_parameters_mode(self):
        from leosim.dql import AgentConfig
        from leosim.config import ScenarioConfig
        sc = tiny_scenario()
        sc = replace(sc, agent=replace(sc.agent, shared_params=False))
        agent = make_agent(sc)
        sim = Simulation(sc, "hybrid", 1.0, 42, agent)
        r = sim.run()
        assert r.generated == r.delivered + sum(r.dropped.values()) + r.in_flight
        if r.q_evals > 0:
            assert len(sim._sat_agents) > 0
            # fallback updates touched only per-satellite copies
            assert agent.updates == 0

    def test_onehot_destination_encoding(self):
        sc = tiny_scenario()
        sc = replace(sc, agent=replace(sc.agent, dest_encoding="onehot"))
        agent = make_agent(sc)
        assert agent.state_dim == 18 + 11       # 3 gateways + 8 user terminals
        r = run(sc, "rl", 0.5, 42, agent)
        assert r.generated == r.delivered + sum(r.dropped.values()) + r.in_flight

    def test_rl_online_updates_toggle(self):
        sc = tiny_scenario(rl_online_updates=True)
        agent = make_agent(sc)
        r = run(sc, "rl", 0.5, 42, agent)
        assert agent.updates > 0
        sc_off = tiny_scenario()
        agent2 = make_agent(sc_off)
        run(sc_off, "rl", 0.5, 42, agent2)
        assert agent2.updates == 0


class TestGroundFileScenario:
    def test_ground_file_round_trip_through_engine(self, tmp_path):
        nodes = generate_ground_nodes(3, 8, seed=77, max_latitude_deg=45.0,
                                      min_separation_deg=12.0)
        path = tmp_path / "ground.txt"
        write_ground_file(nodes, path)
        sc = replace(tiny_scenario(),
                     ground=GroundConfig(ground_file=str(path)))
        sim = Simulation(sc, "table", 0.5, 42)
        assert [g.node_id for g in sim.ground_nodes] == [n.node_id for n in nodes]
        r = sim.run()
        assert r.generated > 0
