"""Figures written next to the CSV outputs of ``run`` and ``sweep``."""

from __future__ import annotations

import itertools

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PLOT_METRICS = ("bleu1", "bleu2", "rouge_l", "embed_f1")
LABELS = {
    "bleu1": "BLEU-1",
    "bleu2": "BLEU-2",
    "rouge_l": "ROUGE-L",
    "embed_p": "Embed-P",
    "embed_r": "Embed-R",
    "embed_f1": "Embed-F1",
    "temperature": "temperature",
    "max_tokens": "max tokens",
    "alpha": r"layer weight $\alpha$",
}
# x-axis preference when several parameters vary
_AXIS_PRIORITY = ("alpha", "max_tokens", "temperature")


def plot_run_metrics(report: dict, path) -> None:
    mean = report["metrics"]["mean"]
    std = report["metrics"]["std"]
    names = [m for m in ("bleu1", "bleu2", "rouge_l", "embed_p", "embed_r", "embed_f1") if m in mean]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(names)), [100 * mean[m] for m in names],
           yerr=[100 * std[m] for m in names], capsize=3, color="#1f77b4")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([LABELS[m] for m in names])
    ax.set_ylabel("score (x100)")
    ax.set_title(f"{report['config']['variant']} ({report['metrics']['count']} notes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(rows, params, path) -> None:
    """One panel per metric; x is the preferred varying parameter, one line per other combo."""
    varying = [p for p in params if len({r[p] for r in rows}) > 1] or list(params)
    x_param = next(p for p in _AXIS_PRIORITY if p in varying)
    series_params = [p for p in params if p != x_param]
    groups = {}
    for row in rows:
        key = tuple(row[p] for p in series_params)
        groups.setdefault(key, []).append(row)

    fig, axes = plt.subplots(1, len(PLOT_METRICS), figsize=(3.2 * len(PLOT_METRICS), 3.2), squeeze=False)
    markers = itertools.cycle("osd^v")
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        members = sorted(members, key=lambda r: r[x_param])
        label = ", ".join(f"{p}={v}" for p, v in zip(series_params, key)) or None
        marker = next(markers)
        for ax, metric in zip(axes[0], PLOT_METRICS):
            pts = [(r[x_param], 100 * r[metric]) for r in members if r.get(metric) is not None]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker=marker, label=label)
    for ax, metric in zip(axes[0], PLOT_METRICS):
        ax.set_title(LABELS[metric])
        ax.set_xlabel(LABELS[x_param])
    axes[0][0].set_ylabel("score (x100)")
    if series_params:
        axes[0][-1].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
