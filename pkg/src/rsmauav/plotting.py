"""PNG figures for runs and comparisons (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

SCHEME_LABELS = {
    "rsma": "RSMA (proposed)",
    "noma": "NOMA",
    "fixed_position": "fixed position",
    "fixed_power": "fixed power",
    "no_geometry": "no geometry",
}


def _save(fig, path):
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_trace(trace, path):
    """Min-rate and trust-region radius per iteration."""
    it = [t.iter for t in trace]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(it, [t.min_rate for t in trace], "o-", color="C0", label="min rate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("min rate [bit/s/Hz]")
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(it, [t.zeta for t in trace], "--", color="C1", label="trust radius")
    ax2.set_ylabel("trust radius [m]")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="lower right", fontsize=8)
    _save(fig, path)


def plot_layout(sc, state, path, initial=None):
    """Top view: buildings shaded by height, users, UAVs and their associations."""
    fig, ax = plt.subplots(figsize=(6, 6))
    polys = [Polygon(b.vertices, closed=True) for b in sc.buildings]
    if polys:
        pc = PatchCollection(polys, cmap="Greys", edgecolor="0.3", linewidth=0.5)
        pc.set_array(np.array([b.height for b in sc.buildings]))
        pc.set_clim(0, max(b.height for b in sc.buildings))
        ax.add_collection(pc)
        fig.colorbar(pc, ax=ax, fraction=0.04, label="building height [m]")
    users = sc.users
    X = state.positions
    serving = state.assoc.serving_uav()
    for k, m in enumerate(serving):
        ax.plot([users[k, 0], X[m, 0]], [users[k, 1], X[m, 1]], color=f"C{m}", lw=0.8, alpha=0.7)
    ax.scatter(users[:, 0], users[:, 1], c=[f"C{m}" for m in serving], s=18, zorder=3)
    ax.scatter([], [], c="0.5", s=18, label="users (colored by UAV)")
    if initial is not None:
        X0 = initial.positions
        ax.scatter(X0[:, 0], X0[:, 1], marker="x", c="k", s=40, zorder=4, label="initial UAVs")
    ax.scatter(X[:, 0], X[:, 1], marker="^", c=[f"C{m}" for m in range(len(X))], edgecolor="k", s=90, zorder=5)
    ax.scatter([], [], marker="^", c="0.5", edgecolor="k", s=90, label="UAVs")
    for m, x in enumerate(X):
        ax.annotate(f"{x[2]:.0f} m", (x[0], x[1]), xytext=(5, 5), textcoords="offset points", fontsize=7)
    x0, x1, y0, y1 = sc.area
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper right", fontsize=7)
    _save(fig, path)


def plot_comparison(report, path):
    """Mean min-rate per scheme, grouped by user count."""
    from .harness import mean_rates

    means = mean_rates(report)
    counts = sorted({n for n, _ in means})
    schemes = [s for s in SCHEME_LABELS if any((n, s) in means for n in counts)]
    width = 0.8 / max(len(schemes), 1)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, s in enumerate(schemes):
        vals = [means.get((n, s), np.nan) for n in counts]
        ax.bar(np.arange(len(counts)) + i * width, vals, width, label=SCHEME_LABELS[s])
    ax.set_xticks(np.arange(len(counts)) + width * (len(schemes) - 1) / 2)
    ax.set_xticklabels([str(n) for n in counts])
    ax.set_xlabel("number of users")
    ax.set_ylabel("mean min rate [bit/s/Hz]")
    ax.legend(fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)
