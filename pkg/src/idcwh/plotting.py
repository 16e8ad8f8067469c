"""Matplotlib figures written next to the CSV/JSON reports."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}

# no Software/date tags, so reruns produce identical files
_PNG_META = {"Software": None}


def figsize(scale=1.0):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    width = 5.0 * scale
    return width, width * golden


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_pr_curve(report, path, label=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        if report.pr_curve:
            rec, prec = zip(*report.pr_curve)
            ax.plot(rec, prec, label=label or f"{report.code_length} bits")
            ax.legend()
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        _save(fig, path)


def plot_precision_at_n(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        if report.p_at_n:
            n, p = zip(*report.p_at_n)
            ax.plot(n, p, marker="o", markersize=3)
            ax.set_xscale("log")
        ax.set_xlabel("number of top returned items N")
        ax.set_ylabel("precision@N")
        ax.set_ylim(0, 1.02)
        _save(fig, path)


def plot_loss_history(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        epochs = range(1, len(history) + 1)
        for name in ("l1", "l2", "total"):
            ax.plot(epochs, [getattr(b, name) for b in history], label=name)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean batch loss")
        ax.legend()
        _save(fig, path)


def plot_sweep(rows, x, path, y="map", group="code_length"):
    """One line per ``group`` value of mean ``y`` against ``x`` (seeds averaged)."""
    ok = [r for r in rows if r.get("status", "ok") == "ok"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for g in sorted({r[group] for r in ok}):
            by_x = {}
            for r in ok:
                if r[group] == g:
                    by_x.setdefault(r[x], []).append(r[y])
            xs = sorted(by_x)
            ax.plot(xs, [sum(by_x[v]) / len(by_x[v]) for v in xs], marker="o", label=f"{group}={g}")
        if len({r[x] for r in ok}) > 1 and x in ("sigma_sq", "beta"):
            ax.set_xscale("log")
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        if ok:
            ax.legend()
        _save(fig, path)
