"""Command-line front end: `pretrain` a Q-agent checkpoint, `evaluate` a
{policy} x {eta} x {seed} grid into results.csv / summary.json / delay
sidecars, and `validate` a configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfg_mod
from . import engine, pretrain as pretrain_mod, traffic
from .config import PRESETS, ScenarioConfig
from .dql import QAgent
from .engine import CSV_COLUMNS, MetricsReport
from .orbits import ConfigurationError


def build_config(args) -> ScenarioConfig:
    base = PRESETS[args.preset]() if args.preset else ScenarioConfig()
    if args.config:
        base = cfg_mod.load(args.config, base)
    if args.set:
        base = cfg_mod.apply_overrides(base, args.set)
    run_updates = {}
    if getattr(args, "policy", None):
        run_updates["policies"] = tuple(args.policy.split(","))
    if getattr(args, "eta", None):
        run_updates["etas"] = tuple(float(x) for x in args.eta.split(","))
    if getattr(args, "seeds", None):
        run_updates["n_seeds"] = args.seeds
    if getattr(args, "out", None):
        run_updates["out_dir"] = args.out
    if getattr(args, "workers", None):
        run_updates["workers"] = args.workers
    if run_updates:
        base = replace(base, run=replace(base.run, **run_updates))
    return base


def _sidecar_name(policy: str, eta: float, seed: int) -> str:
    return f"delays_{policy}_eta{eta:g}_seed{seed}.txt"


def _run_one(payload):
    """Worker entry for one (policy, eta, seed) run; returns the report plus
    its wall time. A fresh agent is loaded per run so runs stay independent."""
    scenario, policy, eta, seed, checkpoint, trace_path = payload
    agent = None
    if policy in ("rl", "hybrid"):
        agent = QAgent.load(checkpoint)
    t0 = time.perf_counter()
    report = engine.run(scenario, policy, eta, seed, agent, trace_path)
    return report, time.perf_counter() - t0


def cmd_validate(args) -> int:
    scenario = build_config(args)
    warnings = cfg_mod.validate(scenario)
    c = scenario.constellation
    print(f"constellation: {c.planes} planes x {c.sats_per_plane} sats "
          f"({c.n_sats} total), h={c.altitude_km:g} km, i={c.inclination_deg:g} deg")
    print(f"orbital period: {c.period_s:.1f} s")
    intra_km = 2.0 * c.radius_km * math.sin(math.pi / c.sats_per_plane)
    print(f"intra-plane spacing: {intra_km:.1f} km (isl_max_km={scenario.links.isl_max_km:g})")
    for eta in scenario.run.etas:
        load = traffic.offered_load(eta, scenario.traffic.lambda0, scenario.traffic.n_flows)
        print(f"offered load at eta={eta:g}: {load:g} pkts/s")
    for w in warnings:
        print(f"warning: {w}")
    if not warnings:
        print("no warnings")
    return 0


def cmd_pretrain(args) -> int:
    scenario = build_config(args)
    cfg_mod.validate(scenario)
    budget = args.steps if args.steps is not None else scenario.agent.pretrain_steps
    if budget < 1:
        print("error: pretrain step budget must be >= 1", file=sys.stderr)
        return 2
    out_dir = Path(scenario.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out_dir / "checkpoint.bin"
    log = print if args.verbose else None
    agent, stats = pretrain_mod.pretrain(scenario, budget, log=log)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    agent.save(ckpt)
    cfg_mod.save(scenario, out_dir / "resolved_config.ini")
    print(f"checkpoint: {ckpt}")
    print(f"episodes: {stats['episodes']}  steps: {stats['steps']}  "
          f"updates: {stats['updates']}")
    print(f"final epsilon: {stats['final_epsilon']:.4f}")
    print(f"mean episode reward: {stats['mean_episode_reward']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    scenario = build_config(args)
    cfg_mod.validate(scenario)
    needs_agent = any(p in ("rl", "hybrid") for p in scenario.run.policies)
    if needs_agent:
        if not args.checkpoint:
            print("error: --checkpoint is required for rl/hybrid policies", file=sys.stderr)
            return 2
        if not Path(args.checkpoint).exists():
            print(f"error: checkpoint {args.checkpoint} not found", file=sys.stderr)
            return 2
    out_dir = Path(scenario.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    for policy in scenario.run.policies:
        for eta in scenario.run.etas:
            for idx in range(scenario.run.n_seeds):
                seed = cfg_mod.run_seed(scenario, idx)
                trace = None
                if scenario.engine.trace_log:
                    trace = str(out_dir / f"trace_{policy}_eta{eta:g}_seed{seed}.jsonl")
                runs.append((scenario, policy, eta, seed, args.checkpoint, trace))

    if scenario.run.workers > 1:
        with ProcessPoolExecutor(max_workers=scenario.run.workers) as pool:
            results = list(pool.map(_run_one, runs))
    else:
        results = [_run_one(r) for r in runs]

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for (report, wall) in results:
            writer.writerow(report.csv_row(wall))
    for report, _ in results:
        sidecar = out_dir / _sidecar_name(report.policy, report.eta, report.seed)
        with open(sidecar, "w") as f:
            for d in report.delay_samples_ms:
                f.write(f"{d!r}\n")

    summary = {}
    for policy in scenario.run.policies:
        summary[policy] = {}
        for eta in scenario.run.etas:
            group = [r for r, _ in results if r.policy == policy and r.eta == eta]
            summary[policy][f"{eta:g}"] = engine.aggregate(group)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True, allow_nan=True)
    cfg_mod.save(scenario, out_dir / "resolved_config.ini")

    print(f"wrote {csv_path} ({len(results)} runs)")
    for policy in scenario.run.policies:
        for eta in scenario.run.etas:
            s = summary[policy][f"{eta:g}"]
            print(f"{policy} eta={eta:g}: pdr={s['pdr']['mean']:.3f} "
                  f"hops={s['mean_hops']['mean']:.2f} "
                  f"tput={s['throughput_pps']['mean']:.1f} pps "
                  f"p_fb={s['p_fb']['mean']:.4f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leosim",
        description="Packet-level LEO constellation routing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("pretrain", help="train a Q-agent checkpoint offline")
    common(p)
    p.add_argument("--steps", type=int, help="training step budget")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("evaluate", help="run the {policy} x {eta} x {seed} grid")
    common(p)
    p.add_argument("--checkpoint", help="Q-agent checkpoint (rl/hybrid)")
    p.add_argument("--policy", help="comma list: table,rl,hybrid")
    p.add_argument("--eta", help="comma list of input-rate scales")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--workers", type=int, help="parallel runs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="check a configuration and print derived values")
    common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
