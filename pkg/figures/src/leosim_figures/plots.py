"""Plots over leosim evaluation outputs. Strictly downstream: every statistic
drawn here is a pure function of the results CSV and the delay sample files,
never recomputed from simulation state.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

REQUIRED_COLUMNS = [
    "policy", "eta", "seed", "generated", "delivered", "dropped_overflow",
    "dropped_ttl", "dropped_noroute", "pdr", "mean_delay_ms", "p50_delay_ms",
    "p95_delay_ms", "mean_hops", "throughput_pps", "p_fb", "table_lookups",
    "q_evals", "wall_time_s",
]

PLOTTABLE_METRICS = ("pdr", "mean_hops", "throughput_pps", "p_fb")

METRIC_LABELS = {
    "pdr": "packet delivery ratio",
    "mean_hops": "average hop count",
    "throughput_pps": "throughput (pkts/s)",
    "p_fb": "fallback activation rate",
}


class SchemaError(ValueError):
    """Input file is missing required columns or data."""


def load_results(csv_path) -> list[dict]:
    with open(csv_path) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise SchemaError(f"{csv_path}: empty results file")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{csv_path}: missing columns {missing}")
        rows = []
        for raw in reader:
            row = dict(raw)
            row["eta"] = float(raw["eta"])
            row["seed"] = int(raw["seed"])
            for m in ("pdr", "mean_delay_ms", "p50_delay_ms", "p95_delay_ms",
                      "mean_hops", "throughput_pps", "p_fb"):
                row[m] = float(raw[m])
            rows.append(row)
    if not rows:
        raise SchemaError(f"{csv_path}: no result rows")
    return rows


def metric_stats(rows: list[dict], metric: str) -> dict:
    """{policy: {eta: (mean, std)}} over seeds, in file order."""
    if metric not in PLOTTABLE_METRICS:
        raise SchemaError(f"metric {metric!r} not plottable; "
                          f"choose one of {PLOTTABLE_METRICS}")
    groups: dict = {}
    for row in rows:
        groups.setdefault(row["policy"], {}).setdefault(row["eta"], []).append(row[metric])
    return {
        policy: {
            eta: (float(np.mean(vals)), float(np.std(vals)))
            for eta, vals in sorted(etas.items())
        }
        for policy, etas in groups.items()
    }


def plot_metric_vs_eta(csv_path, metric: str, out_path) -> dict:
    """One line per policy with a +/- std band; returns the plotted stats."""
    rows = load_results(csv_path)
    stats = metric_stats(rows, metric)
    fig, ax = plt.subplots(figsize=(6, 4))
    for policy, by_eta in sorted(stats.items()):
        etas = sorted(by_eta)
        means = np.array([by_eta[e][0] for e in etas])
        stds = np.array([by_eta[e][1] for e in etas])
        ax.plot(etas, means, marker="o", label=policy)
        ax.fill_between(etas, means - stds, means + stds, alpha=0.2)
    ax.set_xlabel("normalized input rate")
    ax.set_ylabel(METRIC_LABELS.get(metric, metric))
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return stats


def read_delay_samples(path) -> list[float]:
    samples = [float(line) for line in Path(path).read_text().split()]
    if not samples:
        raise SchemaError(f"{path}: empty delay sample file")
    return samples


def nearest_rank(samples: list[float], pct: float) -> float:
    s = sorted(samples)
    k = max(1, math.ceil(pct / 100.0 * len(s)))
    return s[k - 1]


def cdf_points(samples: list[float]):
    xs = np.sort(np.asarray(samples))
    ys = np.arange(1, len(xs) + 1) / len(xs)
    return xs, ys


def plot_delay_cdf(sample_files: dict, out_path) -> dict:
    """Empirical delay CDF per policy (samples pooled over files), with the
    median and 95th percentile annotated. Returns {policy: {p50, p95, n}}."""
    if not sample_files:
        raise SchemaError("no delay sample files given")
    fig, ax = plt.subplots(figsize=(6, 4))
    stats = {}
    for policy, paths in sorted(sample_files.items()):
        samples: list[float] = []
        for p in paths:
            samples.extend(read_delay_samples(p))
        xs, ys = cdf_points(samples)
        ax.step(xs, ys, where="post", label=policy)
        p50 = nearest_rank(samples, 50.0)
        p95 = nearest_rank(samples, 95.0)
        stats[policy] = {"p50": p50, "p95": p95, "n": len(samples)}
        ax.axvline(p50, linestyle=":", alpha=0.4)
        ax.axvline(p95, linestyle="--", alpha=0.4)
        ax.annotate(f"{policy}: p50={p50:.1f} ms, p95={p95:.1f} ms",
                    xy=(p95, 0.95), fontsize=8,
                    xytext=(5, -12 * len(stats)), textcoords="offset points")
    ax.set_xlabel("end-to-end delay (ms)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return stats
