"""Figure generation for leosim evaluation outputs."""

__version__ = "0.1.0"

from .plots import (
    SchemaError,
    cdf_points,
    load_results,
    metric_stats,
    nearest_rank,
    plot_delay_cdf,
    plot_metric_vs_eta,
)

__all__ = [
    "SchemaError",
    "cdf_points",
    "load_results",
    "metric_stats",
    "nearest_rank",
    "plot_delay_cdf",
    "plot_metric_vs_eta",
]
