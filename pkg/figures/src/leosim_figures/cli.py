"""Batch figure generation: point at a leosim results directory, get one
image per metric plus the delay CDF."""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from .plots import PLOTTABLE_METRICS, SchemaError, plot_delay_cdf, plot_metric_vs_eta

SIDECAR_RE = re.compile(r"delays_(?P<policy>[^_]+)_eta(?P<eta>[0-9.]+)_seed(?P<seed>\d+)\.txt")


def find_sidecars(results_dir: Path, eta: float) -> dict:
    out: dict = {}
    for f in sorted(results_dir.glob("delays_*.txt")):
        m = SIDECAR_RE.match(f.name)
        if not m or float(m.group("eta")) != eta:
            continue
        out.setdefault(m.group("policy"), []).append(f)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="leosim-figures",
        description="Generate evaluation figures from a leosim results directory")
    parser.add_argument("results_dir", help="directory holding results.csv and delay sidecars")
    parser.add_argument("--out", default=None, help="output directory (default: results_dir/figures)")
    parser.add_argument("--cdf-eta", type=float, default=1.0,
                        help="input rate whose delay samples feed the CDF figure")
    parser.add_argument("--format", default="png", choices=("png", "svg"))
    args = parser.parse_args(argv)

    results_dir = Path(args.results_dir)
    csv_path = results_dir / "results.csv"
    if not csv_path.exists():
        print(f"error: {csv_path} not found", file=sys.stderr)
        return 2
    out_dir = Path(args.out) if args.out else results_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        for metric in PLOTTABLE_METRICS:
            path = out_dir / f"{metric}_vs_eta.{args.format}"
            plot_metric_vs_eta(csv_path, metric, path)
            print(f"wrote {path}")
        sidecars = find_sidecars(results_dir, args.cdf_eta)
        if sidecars:
            path = out_dir / f"delay_cdf_eta{args.cdf_eta:g}.{args.format}"
            stats = plot_delay_cdf(sidecars, path)
            print(f"wrote {path}")
            for policy, s in sorted(stats.items()):
                print(f"  {policy}: p50={s['p50']:.2f} ms p95={s['p95']:.2f} ms (n={s['n']})")
        else:
            print(f"note: no delay sidecars for eta={args.cdf_eta:g}; CDF skipped")
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
