"""CSV writers and matplotlib figures backing the CLI reports."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no software/date metadata so repeated runs produce identical files
_PNG_META = {"Software": None}


def csv_text(header, rows, seed=None, comments=()) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows, seed=None, comments=()) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows, seed, comments))
    return path


def figure_path(report_path, suffix: str = "") -> Path:
    p = Path(report_path)
    return p.with_name(f"{p.stem}{suffix}.png")


def score_histogram(scores_by_op: dict, targets: list, bins: int = 20):
    """Counts of TMQI scores per operator (and of the chosen targets) over equal bins on [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    header = ["bin_lo", "bin_hi", *scores_by_op.keys(), "target"]
    counts = [np.histogram(np.clip(v, 0, 1), edges)[0] for v in scores_by_op.values()]
    counts.append(np.histogram(np.clip(targets, 0, 1), edges)[0])
    rows = [[f"{edges[i]:.3f}", f"{edges[i + 1]:.3f}", *(int(c[i]) for c in counts)] for i in range(bins)]
    return header, rows, edges, counts


def plot_score_histogram(path, edges, scores_by_op: dict, targets: list):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    names = list(scores_by_op)
    data = [np.clip(scores_by_op[n], 0, 1) for n in names]
    if data:
        ax1.boxplot(data)
        ax1.set_xticks(range(1, len(names) + 1))
        ax1.set_xticklabels(names)
    ax1.set_ylabel("TMQI Q")
    ax1.set_title("score per operator")
    ax1.tick_params(axis="x", rotation=45)
    ax2.hist(np.clip(targets, 0, 1), bins=edges, color="tab:blue", edgecolor="black")
    ax2.set_xlabel("TMQI Q of selected target")
    ax2.set_ylabel("scenes")
    ax2.set_title("target score distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_preferences(path, scenes, prefs, verdicts, favored_line=None, disfavored_line=None):
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(scenes) + 2), 4))
    colors = {"Favored": "tab:green", "Disfavored": "tab:red", "Inconclusive": "tab:gray"}
    ax.bar(range(len(scenes)), prefs, color=[colors.get(v, "tab:gray") for v in verdicts], edgecolor="black")
    ax.set_xticks(range(len(scenes)))
    ax.set_xticklabels(scenes, rotation=45, ha="right")
    ax.axhline(0.5, color="black", linewidth=0.8)
    if favored_line is not None:
        ax.axhline(favored_line, color="tab:green", linestyle="--", linewidth=0.8)
    if disfavored_line is not None:
        ax.axhline(disfavored_line, color="tab:red", linestyle="--", linewidth=0.8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("preference probability")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_losses(path, rows):
    """Loss curves from loss-log rows (dicts with step, d_loss, g_adv, g_fm, g_prp)."""
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("d_loss", "g_adv", "g_fm", "g_prp"):
        ax.plot(steps, [float(r[key]) for r in rows], label=key)
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
