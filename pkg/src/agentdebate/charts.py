"""Matplotlib figures written to files: attitude trajectories and alignment heatmaps."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analytics import NEUTRAL_BASELINE, Trajectory  # noqa: E402
from .persona import AlignmentStats  # noqa: E402

LEANING_COLORS = {"neutral": "#7f7f7f", "republican": "#d62728", "democrat": "#1f77b4"}
_EXTRA_COLORS = ["#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

# fixed ids and no timestamp so re-rendering the same data gives identical bytes
plt.rcParams["svg.hashsalt"] = "agentdebate"
_SAVE_META = {"svg": {"Date": None}, "png": {}, "pdf": {"CreationDate": None}}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".") or "svg"
    fig.savefig(path, format=fmt, metadata=_SAVE_META.get(fmt), bbox_inches="tight")
    plt.close(fig)
    return path


def trajectory_chart(trajectories: Mapping[str, Trajectory], agents: Sequence[dict],
                     path: str | Path, title: str = "") -> Path:
    """Per-agent mean line with a box per phase, y fixed to the 1-7 scale."""
    fig, ax = plt.subplots(figsize=(10, 4.5))
    ids = [a["agent_id"] for a in agents if a["agent_id"] in trajectories]
    width = 0.8 / max(len(ids), 1)
    used: dict[str, int] = {}
    labels: list[str] = []
    for i, aid in enumerate(ids):
        meta = next(a for a in agents if a["agent_id"] == aid)
        color = LEANING_COLORS.get(meta["leaning"], "#000000")
        seen = used.get(meta["leaning"], 0)
        if seen:
            color = _EXTRA_COLORS[(seen - 1) % len(_EXTRA_COLORS)]
        used[meta["leaning"]] = seen + 1
        traj = trajectories[aid]
        labels = [p.label.replace("round ", "") for p in traj.phases]
        offset = (i - (len(ids) - 1) / 2) * width
        xs = [p.position + offset for p in traj.phases if p.n]
        data = [list(p.values) for p in traj.phases if p.n]
        if data:
            box = ax.boxplot(data, positions=xs, widths=width * 0.8, patch_artist=True,
                             manage_ticks=False, showfliers=True)
            for patch in box["boxes"]:
                patch.set(facecolor=color, alpha=0.25, edgecolor=color)
            for part in ("whiskers", "caps", "medians"):
                for line in box[part]:
                    line.set(color=color)
        ax.plot([p.position for p in traj.phases if p.mean is not None],
                [p.mean for p in traj.phases if p.mean is not None],
                marker="o", color=color, label=f"{meta['name']} ({meta['leaning']})")
    ax.axhline(NEUTRAL_BASELINE, color="black", linestyle="--", linewidth=0.8)
    ax.set_ylim(0.8, 7.2)
    ax.set_yticks(range(1, 8))
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([lab.capitalize() if not lab.isdigit() else lab for lab in labels])
    ax.set_xlabel("Debate phase")
    ax.set_ylabel("Attitude score")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    return _save(fig, Path(path))


def alignment_heatmap(stats: AlignmentStats, path: str | Path) -> Path:
    models, variants = stats.models, stats.variants
    grid = [[(stats.cells[(m, v)].fraction if (m, v) in stats.cells else None) for v in variants]
            for m in models]
    values = [[100 * x if x is not None else float("nan") for x in row] for row in grid]
    fig, ax = plt.subplots(figsize=(1.2 * len(variants) + 2, 0.6 * len(models) + 1.5))
    im = ax.imshow(values, cmap="viridis", vmin=0, vmax=100, aspect="auto")
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants, rotation=45, ha="right")
    ax.set_yticks(range(len(models)))
    ax.set_yticklabels(models)
    for r, row in enumerate(grid):
        for c, x in enumerate(row):
            if x is not None:
                ax.text(c, r, f"{100 * x:.1f}", ha="center", va="center",
                        color="white" if x < 0.6 else "black", fontsize="small")
    fig.colorbar(im, ax=ax, label="% aligned")
    return _save(fig, Path(path))
