"""Report figures: error box plots, training curves and active-rule counts."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def error_boxplot(report, path):
    """Absolute errors per model; the white diamond marks the mean."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [e.label for e in report.entries]
        data = [e.errors for e in report.entries]
        ax.boxplot(data, showfliers=True, flierprops={"markersize": 2})
        ax.set_xticks(range(1, len(labels) + 1), labels)
        means = [float(np.mean(d)) for d in data]
        ax.scatter(range(1, len(means) + 1), means, marker="D", s=18, c="white",
                   edgecolors="black", zorder=3, label="mean")
        ax.set_ylabel("absolute error")
        ax.legend(loc="upper right")
        return _save(fig, path)


def training_curves(history, path):
    with plt.rc_context(STYLE):
        fig, (ax, ax_pen) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 5.0))
        epochs = history.column("epoch")
        ax.plot(epochs, history.column("train_loss"), label="train")
        ax.plot(epochs, history.column("val_loss"), label="validation")
        if history.best_epoch >= 0:
            ax.axvline(history.best_epoch, color="0.6", lw=0.8, ls="--", label="best")
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend()
        for name in ("long", "fuzzy", "implied", "exclusive"):
            ax_pen.plot(epochs, history.column(f"lambda_{name}"), label=name)
        ax_pen.set_ylabel("penalty")
        ax_pen.set_xlabel("epoch")
        ax_alpha = ax_pen.twinx()
        ax_alpha.plot(epochs, history.column("alpha"), color="black", lw=0.8, ls=":")
        ax_alpha.set_ylabel("alpha")
        ax_pen.legend(loc="upper right")
        return _save(fig, path)


def rule_count_bars(counts: dict, path):
    """``counts`` maps a label (e.g. 'no penalties') to active_rule_count output."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = list(counts)
        means = [counts[k]["mean"] for k in labels]
        maxes = [counts[k]["max"] for k in labels]
        x = np.arange(len(labels))
        ax.bar(x - 0.2, means, width=0.4, label="mean per prediction")
        ax.bar(x + 0.2, maxes, width=0.4, label="max per prediction")
        ax.set_xticks(x, labels)
        ax.set_ylabel("rules used")
        ax.legend()
        return _save(fig, path)
