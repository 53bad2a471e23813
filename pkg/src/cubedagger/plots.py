"""Matplotlib figures for experiment reports.

Two figures accompany the delimited output of a run:
  * learning curves — per-episode Diff (executed-vs-expert action gap) and
    Score for every (condition, seed) trace;
  * summary bars — median Retention and Robustness per condition with the
    scripted expert's reference and worst-case scores as dashed lines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CONDITION_COLORS = {
    "EV1": "tab:gray",
    "EV2": "tab:blue",
    "C1": "tab:green",
    "C2": "tab:orange",
    "C3": "tab:red",
}


def _color(condition: str) -> str:
    return CONDITION_COLORS.get(condition, "tab:purple")


def render_curves(curve_rows: list[dict], path: str):
    """Diff and Score traces per episode.

    curve_rows: dicts with keys condition, seed, episode, score, mean_diff.
    """
    fig, (ax_diff, ax_score) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    by_trace: dict[tuple, list[dict]] = {}
    for row in curve_rows:
        by_trace.setdefault((row["condition"], row["seed"]), []).append(row)
    labeled = set()
    for (cond, _seed), rows in sorted(by_trace.items()):
        rows = sorted(rows, key=lambda r: r["episode"])
        eps = [r["episode"] for r in rows]
        label = cond if cond not in labeled else None
        labeled.add(cond)
        ax_diff.plot(eps, [r["mean_diff"] for r in rows], color=_color(cond),
                     alpha=0.6, label=label)
        ax_score.plot(eps, [r["score"] for r in rows], color=_color(cond), alpha=0.6)
    ax_diff.set_ylabel("Diff  mean |a - a$^c$|")
    ax_score.set_ylabel("Score")
    ax_score.set_xlabel("episode")
    ax_diff.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_bars(summary_rows: list[dict], expert_ref: float,
                expert_worst: float, path: str):
    """Median Retention/Robustness per condition.

    summary_rows: dicts with keys condition, retention, robustness
    (one row per seed; failed rows should be filtered out by the caller).
    """
    by_cond: dict[str, list[dict]] = {}
    for row in summary_rows:
        by_cond.setdefault(row["condition"], []).append(row)
    conds = [c for c in ("EV1", "EV2", "C1", "C2", "C3") if c in by_cond]
    conds += sorted(set(by_cond) - set(conds))
    ret = [float(np.median([r["retention"] for r in by_cond[c]])) for c in conds]
    rob = [float(np.median([r["robustness"] for r in by_cond[c]])) for c in conds]
    x = np.arange(len(conds))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, ret, width=0.4, label="Retention",
           color=[_color(c) for c in conds], alpha=0.9)
    ax.bar(x + 0.2, rob, width=0.4, label="Robustness",
           color=[_color(c) for c in conds], alpha=0.5, hatch="//")
    ax.axhline(expert_ref, color="k", linestyle="--", linewidth=1,
               label="expert mean")
    ax.axhline(expert_worst, color="k", linestyle=":", linewidth=1,
               label="expert worst")
    ax.set_xticks(x, conds)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
