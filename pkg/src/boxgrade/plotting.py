"""Report figures: threshold trade-off, per-class metrics, training curves."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _save(fig, path, run_config=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    meta = {"Description": json.dumps(run_config, sort_keys=True)} if run_config else None
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def plot_tradeoff(curves: dict, path, title: str | None = None, run_config=None) -> Path:
    """Recall of good labels against false acceptance of bad labels.

    ``curves`` maps a legend label to a list of ``CurvePoint``. A
    ``run_config`` dict, if given, is embedded in the PNG metadata.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, points in curves.items():
            pts = sorted(points, key=lambda p: -p.threshold)
            ax.plot([p.mean_false_accept_bad for p in pts], [p.mean_recall_good for p in pts],
                    marker="o", ms=3, label=label)
        ax.set_xlabel("mean false acceptance of bad labels")
        ax.set_ylabel("mean recall of good labels")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        return _save(fig, path, run_config)


def plot_per_class(report, path, run_config=None) -> Path:
    classes = sorted(c for c, m in report.per_class.items() if m.n_good or m.n_bad)
    names = [report.per_class[c].name for c in classes]
    rec = [report.per_class[c].recall_good or 0.0 for c in classes]
    fa = [report.per_class[c].false_accept_bad or 0.0 for c in classes]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.45 * len(classes) + 2), 4.0))
        xs = range(len(classes))
        ax.bar([x - 0.2 for x in xs], rec, width=0.4, label="recall of good")
        ax.bar([x + 0.2 for x in xs], fa, width=0.4, label="false accept of bad")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"threshold {report.threshold_used:g}")
        ax.legend()
        return _save(fig, path, run_config)


def plot_training(log, path, run_config=None) -> Path:
    steps = [r["step"] for r in log]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, [r["loss_image"] for r in log], lw=1, label="image loss")
        ax.plot(steps, [r["loss_text"] for r in log], lw=1, label="text loss")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        evals = [(r["step"], r["eval_accuracy"]) for r in log if "eval_accuracy" in r]
        if evals:
            ax2 = ax.twinx()
            ax2.plot(*zip(*evals), color="k", marker="s", ms=3, label="eval accuracy")
            ax2.set_ylabel("eval accuracy")
            ax2.set_ylim(0, 1)
            ax2.grid(False)
            ax2.legend(loc="center right")
        ax.legend(loc="upper right")
        return _save(fig, path, run_config)
