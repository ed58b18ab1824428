"""Render figures from the harness CSVs into an output directory.

Plots are a post-processing convenience: the delimited files stay the
primary interface and the figures are regenerated from them, never from
in-memory state.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

POLICY_STYLE = {
    "parallel_ql": dict(color="tab:red", marker="o", label="Parallel QL"),
    "ql": dict(color="tab:orange", marker="v", label="QL"),
    "max_rate": dict(color="tab:blue", marker="s", label="MaxRate"),
    "blockage_aware": dict(color="tab:green", marker="^", label="Blockage Aware"),
    "upper_bound": dict(color="black", marker="d", label="Upper Bound"),
}

METRIC_AXES = [
    ("avg_rate_gbps", "Average data rate (Gbit/s)"),
    ("handovers", "Handovers per trip"),
    ("disconn_prob", "Disconnection probability"),
]

SWEEP_LABEL = {
    "mean_speed": "Mean vehicle speed (m/s)",
    "handover_time": "Handover time h (s)",
    "arrival_prob": "Arrival probability",
    "learner_cap": "Number of learners",
    "none": "",
}


def _read_metrics(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _sweep_positions(values: list[str]) -> tuple[list[float], list[str]]:
    """Numeric x positions; 'inf' sits one slot beyond the largest value."""
    numeric = []
    for v in values:
        numeric.append(float("inf") if v == "inf" else float(v))
    finite = [x for x in numeric if x != float("inf")]
    bump = (max(finite) + (finite[-1] - finite[0]) / max(1, len(finite) - 1)) if finite else 1.0
    xs = [bump if x == float("inf") else x for x in numeric]
    labels = [v if v == "inf" else f"{float(v):g}" for v in values]
    return xs, labels


def plot_metrics(metrics_csv, fig_dir) -> list[Path]:
    """One figure per metric: policy curves across the sweep (mean over seeds)."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_metrics(Path(metrics_csv))
    if not rows:
        return []
    sweep_param = rows[0]["sweep_param"]
    values = list(dict.fromkeys(r["sweep_value"] for r in rows))
    xs, xlabels = _sweep_positions(values)
    made = []
    for metric, ylabel in METRIC_AXES:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for policy in POLICY_STYLE:
            series = []
            for value in values:
                cell = [float(r[metric]) for r in rows
                        if r["policy"] == policy and r["sweep_value"] == value]
                series.append(sum(cell) / len(cell) if cell else None)
            if all(v is None for v in series):
                continue
            pts = [(x, y) for x, y in zip(xs, series) if y is not None]
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    linestyle="-", **POLICY_STYLE[policy])
        ax.set_xlabel(SWEEP_LABEL.get(sweep_param, sweep_param))
        ax.set_ylabel(ylabel)
        ax.set_xticks(xs)
        ax.set_xticklabels(xlabels)
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        path = fig_dir / f"{metric}_vs_{sweep_param}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        made.append(path)
    return made


def _read_convergence(path: Path) -> tuple[list[int], list[float], list[float]]:
    updates, times, rewards = [], [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("updates,"):
                continue
            u, t, r, _ = line.strip().split(",")
            updates.append(int(u))
            times.append(float(t))
            rewards.append(float(r))
    return updates, times, rewards


def plot_convergence(out_dir, fig_dir) -> list[Path]:
    """Moving-average reward vs updates and vs simulated seconds, per trained cell."""
    out_dir = Path(out_dir)
    fig_dir = Path(fig_dir)
    files = sorted(out_dir.glob("convergence_*.csv"))
    if not files:
        return []
    fig_dir.mkdir(parents=True, exist_ok=True)
    made = []
    for xaxis, xlabel, stem in ((0, "Global updates", "convergence_updates"),
                                (1, "Simulated time (s)", "convergence_sim_time")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for path in files:
            updates, times, rewards = _read_convergence(path)
            label = path.stem.removeprefix("convergence_")
            ax.plot(updates if xaxis == 0 else times, rewards, label=label, alpha=0.85)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Moving-average reward (Gbit/s)")
        ax.grid(True, alpha=0.4)
        if len(files) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = fig_dir / f"{stem}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        made.append(path)
    return made


def render_report(out_dir) -> list[Path]:
    """Render every figure an output directory supports."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    made = []
    metrics = out_dir / "metrics.csv"
    if metrics.exists():
        made.extend(plot_metrics(metrics, fig_dir))
    made.extend(plot_convergence(out_dir, fig_dir))
    return made
