"""Static figures: training curves and per-metric bar charts (PNG, no display)."""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CURVES = ("spec_post", "l1_post", "total_g")


def plot_training_log(log_path, out_dir):
    """One PNG per loss curve in ``CURVES``, with stage boundaries marked."""
    with open(log_path, encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    out_dir = Path(out_dir)
    steps = [r["step"] for r in recs]
    boundaries = [r["step"] for a, r in zip(recs, recs[1:]) if r["stage"] != a["stage"]]
    written = []
    for key in CURVES:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, [r[key] for r in recs], lw=0.8)
        for b in boundaries:
            ax.axvline(b, color="grey", ls="--", lw=0.7)
        ax.set_xlabel("step")
        ax.set_ylabel(key)
        fig.tight_layout()
        path = out_dir / f"curve_{key}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def plot_summary(summary, out_dir):
    """One bar (mean with std whisker) per metric, one PNG per metric."""
    out_dir = Path(out_dir)
    written = []
    for metric, stats in summary.items():
        fig, ax = plt.subplots(figsize=(2.5, 3.5))
        ax.bar([0], [stats["mean"]], yerr=[stats["std"]], capsize=4)
        ax.set_xticks([])
        ax.set_title(f"{metric} (n={stats['n']})")
        fig.tight_layout()
        path = out_dir / f"bar_{metric}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
