"""Report figures: estimate curves with CI bands, log-RMSE curves, sensitivity."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchmarkReport, ReportRow

PLOT_KINDS = ("estimate", "log_rmse", "sensitivity")

_METHOD_LABELS = {
    "balanced": "balanced (ours)",
    "direct_method": "direct method",
    "doubly_robust": "doubly robust",
    "ips": "IPS",
}


def _methods(rows: list[ReportRow]) -> list[str]:
    return sorted({r.method for r in rows})


def _series(rows: list[ReportRow], method: str, x_attr: str):
    pts = sorted((getattr(r, x_attr), r) for r in rows if r.method == method)
    xs = np.array([p[0] for p in pts])
    return xs, [p[1] for p in pts]


def emit_plot(report: BenchmarkReport, path, kind: str = "estimate") -> None:
    """Render one report figure to ``path`` (extension picks the format).

    ``estimate`` plots mean estimates with 95% CI bands against trajectory
    count, plus a horizontal ground-truth line; ``log_rmse`` plots log RMSE
    against trajectory count; ``sensitivity`` plots RMSE against the swept
    axis (alpha when it varies, otherwise the recorded ASD).
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    rows = report.rows
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    if kind == "sensitivity":
        alphas = {r.alpha for r in rows if not math.isnan(r.alpha)}
        x_attr = "alpha" if len(alphas) > 1 else "asd"
    else:
        x_attr = "n_traj"

    for method in _methods(rows):
        xs, series = _series(rows, method, x_attr)
        label = _METHOD_LABELS.get(method, method)
        if kind == "estimate":
            ys = np.array([r.mean_estimate for r in series])
            lo = np.array([r.ci_low for r in series])
            hi = np.array([r.ci_high for r in series])
            ax.plot(xs, ys, marker="o", label=label)
            if np.isfinite(lo).all() and np.isfinite(hi).all():
                ax.fill_between(xs, lo, hi, alpha=0.2)
        elif kind == "log_rmse":
            ax.plot(xs, [r.log_rmse for r in series], marker="o", label=label)
        else:
            ax.plot(xs, [r.rmse for r in series], marker="o", label=label)

    if kind == "estimate":
        if report.truths:
            truth = next(iter(report.truths.values())).value
            ax.axhline(truth, color="black", linestyle="--", linewidth=1, label="ground truth")
        ax.set_ylabel("estimated policy value")
        ax.set_xlabel("trajectories")
    elif kind == "log_rmse":
        ax.set_ylabel("log RMSE")
        ax.set_xlabel("trajectories")
    else:
        ax.set_ylabel("RMSE")
        ax.set_xlabel("mixture weight alpha" if x_attr == "alpha" else "posterior noise (ASD)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
