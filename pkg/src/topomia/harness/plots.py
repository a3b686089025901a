from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import format_tau  # noqa: E402

plt.rcParams["svg.hashsalt"] = "topomia"
plt.rcParams["axes.axisbelow"] = True

METRIC_TITLE = {"embedding-cosine": "Semantic (embedding cosine)", "rouge2": "ROUGE-2 F1"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def similarity_means_figure(bundle):
    """Grouped bars: member vs non-member mean similarity per (model_tag, tau), one panel per metric."""
    metrics = bundle.metrics()
    groups = bundle.groups()
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 3.6), squeeze=False)
    x = np.arange(len(groups))
    width = 0.38
    labels = [f"{tag}\nτ={format_tau(tau)}" for tag, tau in groups]
    for ax, metric in zip(axes[0], metrics):
        res = [bundle.results[(tag, tau, metric)] for tag, tau in groups]
        ax.bar(x - width / 2, [r.alpha_in for r in res], width, label="member", color="#4c72b0")
        ax.bar(x + width / 2, [r.alpha_out for r in res], width, label="non-member", color="#dd8452")
        ax.set_xticks(x, labels, fontsize=8)
        ax.set_ylabel("mean similarity")
        ax.set_title(METRIC_TITLE.get(metric, metric))
        ax.grid(axis="y", linestyle=":")
        ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def auc_vs_granularity_figure(bundle):
    """Mean subsample AUC against granularity, one polyline per (model_tag, tau)."""
    metrics = bundle.metrics()
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 3.6), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for tag, tau in bundle.groups():
            res = bundle.results[(tag, tau, metric)]
            gs = [run.g for run in res.per_g]
            means = [100 * float(np.mean(run.aucs)) for run in res.per_g]
            ax.plot(gs, means, marker="o", label=f"{tag} τ={format_tau(tau)}")
        ax.axhline(50, color="grey", linestyle="--", linewidth=0.8)
        ax.set_xlabel("granularity g")
        ax.set_ylabel("ROC-AUC (%)")
        ax.set_title(METRIC_TITLE.get(metric, metric))
        ax.grid(linestyle=":")
        ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def similarity_means_plot(bundle, path: Path) -> Path:
    return _save(similarity_means_figure(bundle), path)


def auc_vs_granularity_plot(bundle, path: Path) -> Path:
    return _save(auc_vs_granularity_figure(bundle), path)
