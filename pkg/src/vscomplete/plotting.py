"""Report figures. Rendered with the Agg backend straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_size_histogram(stats: dict, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        hist = stats["size_histogram"]
        ax.bar(list(hist), list(hist.values()), color="#4c72b0")
        ax.set_xlabel("codes per value set")
        ax.set_ylabel("value sets")
        ax.set_title(f"{stats['set_count']} value sets, median size {stats['size_quantiles']['50']}")
        return _save(fig, path)


def plot_strata(report: dict, stratum: str, path: str | Path) -> Path:
    """Grouped F1 bars: classifier vs retrieval-only per stratum."""
    cls = report["classifier"]["strata"][stratum]
    base = report["retrieval_only"]["strata"][stratum]
    keys = list(cls)
    x = range(len(keys))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(keys) + 2), 3.2))
        ax.bar([i - 0.2 for i in x], [cls[k]["f1"] for k in keys], 0.4,
               yerr=[cls[k]["se_f1"] for k in keys], label="MLP", color="#4c72b0")
        ax.bar([i + 0.2 for i in x], [base[k]["f1"] for k in keys], 0.4, label="retrieval only", color="#dd8452")
        ax.set_xticks(list(x))
        ax.set_xticklabels([f"{k}\n(n={cls[k]['n']})" for k in keys], rotation=0, fontsize=7)
        ax.set_ylabel("macro F1")
        ax.set_ylim(0, 1)
        ax.legend()
        return _save(fig, path)


def plot_training_history(history: list[dict], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        epochs = [h["epoch"] for h in history]
        ax.plot(epochs, [h["train_loss"] for h in history], label="train")
        ax.plot(epochs, [h["val_loss"] for h in history], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("weighted BCE")
        ax.legend()
        return _save(fig, path)


def plot_recovery_curves(rows: list[dict], path: str | Path) -> Path:
    """Failure probability vs n for both predictors, one colour per config."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["N"], r["K"], r["gamma"], r["eps_ret"]), []).append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, (key, rs) in enumerate(sorted(groups.items())):
            rs = sorted(rs, key=lambda r: r["n"])
            color = f"C{i % 10}"
            n = [r["n"] for r in rs]
            label = f"N={key[0]}, K={key[1]}, γ={key[2]}, ε={key[3]}"
            ax.plot(n, [r["p_fail_direct_mc"] for r in rs], "-o", ms=3, color=color, label=f"direct {label}")
            ax.plot(n, [r["p_fail_rasc_mc"] for r in rs], "--s", ms=3, color=color, label=f"pooled {label}")
            ax.plot(n, [min(r["bound_direct"], 1.0) for r in rs], ":", color=color, alpha=0.6)
            ax.plot(n, [min(r["bound_rasc"], 1.0) for r in rs], ":", color=color, alpha=0.6)
        ax.axhline(0.05, color="grey", lw=0.8)
        ax.set_xlabel("training samples n")
        ax.set_ylabel("P(exact recovery fails)")
        ax.legend(fontsize=6)
        return _save(fig, path)
