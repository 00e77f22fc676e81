"""Static figures rendered next to report tables.

Everything draws on the Agg backend and saves PNGs with no embedded
software/version metadata, so the same inputs give byte-identical files.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
import numpy as np  # noqa: E402

golden = (math.sqrt(5) - 1) / 2
COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 9,
    "font.size": 8,
    "font.family": "DejaVu Sans",
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def figsize(width=6.5, rows=1):
    return (width, width * golden * 0.75 * rows)


def save(fig, path, **kw):
    fig.savefig(path, format="png", metadata={"Software": None}, **kw)
    plt.close(fig)
    return path


def loss_bars(report, path):
    """Loss per root identifier, one panel per family, one bar per population."""
    from reachcore.dnsmon import N_TARGETS, POPULATIONS
    families = report.families()
    with plt.rc_context(params):
        fig, axes = plt.subplots(len(families), 1, figsize=figsize(rows=len(families)), squeeze=False, sharex=True)
        x = np.arange(1, N_TARGETS + 1)
        width = 0.27
        for ax, fam in zip(axes[:, 0], families):
            for k, pop in enumerate(POPULATIONS):
                y = [report.cells.get((fam, t), {}).get(pop) for t in x]
                y = [c.loss if c is not None and c.loss is not None else np.nan for c in y]
                ax.bar(x + (k - 1) * width, y, width, label=pop.replace("_", " "))
            ax.set_ylabel(f"{fam} loss")
        axes[-1, 0].set_xticks(x, [chr(ord("A") + i) for i in range(N_TARGETS)])
        axes[-1, 0].set_xlabel("root identifier")
        axes[0, 0].legend(ncol=3, loc="upper right")
        fig.tight_layout()
        return save(fig, path)


def estimate_lines(rows, path, block=None):
    """Estimated active addresses per vantage point over rounds."""
    series = {}
    for r in rows:
        if block is None or r.block == block:
            series.setdefault((r.vp, r.block), []).append((r.round, r.active))
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=figsize())
        for (vp, blk), pts in sorted(series.items()):
            pts.sort()
            label = vp if block is not None else f"{vp} {blk}"
            ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", label=label)
        ax.set_xlabel("round")
        ax.set_ylabel("estimated active addresses")
        if len(series) <= 12:
            ax.legend(ncol=2)
        fig.tight_layout()
        return save(fig, path)


def allocation_shares(allocations, weight_field, path):
    """Share of the total held by each top-level actor, nested rows shown inside their parent."""
    top = [a for a in allocations if a.parent is None]
    total = sum(a.weight(weight_field) for a in top)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=figsize())
        names = [a.actor for a in top]
        shares = [a.weight(weight_field) / total for a in top]
        ax.bar(names, shares, color=COLORS[0])
        for a in allocations:
            if a.parent in names:
                ax.bar(a.parent, a.weight(weight_field) / total, width=0.45, color=COLORS[1])
                ax.annotate(a.actor, (names.index(a.parent), a.weight(weight_field) / total),
                            ha="center", va="bottom", fontsize=7)
        ax.axhline(0.5, color="0.4", lw=0.8, ls="--")
        ax.set_ylabel(f"share of {weight_field}")
        fig.tight_layout()
        return save(fig, path)


def tag_fraction_series(rows, path):
    """Island and peninsula shares per family, one point per analyzed day."""
    days = sorted({r["window_start"] for r in rows})
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=figsize())
        for fam in sorted({r["family"] for r in rows}):
            pts = sorted((days.index(r["window_start"]), r["island"], r["peninsula"]) for r in rows if r["family"] == fam)
            x = [p[0] for p in pts]
            ax.plot(x, [p[1] for p in pts], marker="o", ms=3, label=f"{fam} island")
            ax.plot(x, [p[2] for p in pts], marker="s", ms=3, ls="--", label=f"{fam} peninsula")
        ax.set_xlabel("day")
        ax.set_ylabel("share of vantage points")
        ax.set_ylim(bottom=0)
        ax.legend(ncol=2)
        fig.tight_layout()
        return save(fig, path)


def timeline_strips(timelines, path):
    """One horizontal strip per block colored by state label."""
    from reachcore.taxonomy import StateLabel
    colors = dict(zip([l.value for l in StateLabel], ["#cfe8cf", "#9e9e9e", "#444444", "#1f78b4", "#ff7f00", "#fdbf6f", "#ffffff"]))
    blocks = list(timelines)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(6.5, 1.2 + 0.25 * len(blocks)))
        for i, block in enumerate(blocks):
            for s in timelines[block]:
                label = s.label.value if hasattr(s.label, "value") else s.label
                ax.broken_barh([(s.start, s.end - s.start)], (i - 0.4, 0.8), facecolors=colors[label])
        ax.set_yticks(range(len(blocks)), blocks)
        ax.set_xlabel("round")
        handles = [Patch(color=c, label=n) for n, c in colors.items() if n not in ("Unknown",)]
        ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0))
        return save(fig, path, bbox_inches="tight")
