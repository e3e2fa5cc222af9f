"""Matplotlib renderings written alongside the delimited exports.

Every figure has a CSV/JSON twin that carries the same data; the plots are
for eyeballing runs, the files are the interface.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def draw_maze(ax, layout):
    x0, x1, y0, y1 = layout.bounds
    ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color="k", lw=2)
    for wx1, wy1, wx2, wy2 in layout.walls:
        ax.plot([wx1, wx2], [wy1, wy2], color="k",
                lw=max(2.0, layout.thickness * 20))
    ax.set_aspect("equal")
    ax.set_xlim(x0 - 0.2, x1 + 0.2)
    ax.set_ylim(y0 - 0.2, y1 + 0.2)


def draw_goals(ax, goals, eps=None):
    pts = np.asarray(goals.goals)
    ax.plot(pts[:, 0], pts[:, 1], "o", ms=4, color="tab:orange", zorder=3)
    for k, (gx, gy) in enumerate(pts, start=1):
        ax.annotate(str(k), (gx, gy), fontsize=6, xytext=(2, 2),
                    textcoords="offset points")
        if eps is not None:
            ax.add_patch(plt.Circle((gx, gy), eps, fill=False,
                                    color="tab:orange", lw=0.5, alpha=0.6))


def plot_trajectory(path, layout, trajectory, goals=None, eps=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    draw_maze(ax, layout)
    if goals is not None:
        draw_goals(ax, goals, eps)
    traj = np.asarray(trajectory)
    ax.plot(traj[:, 0], traj[:, 1], color="tab:blue", lw=1.2)
    ax.plot(traj[0, 0], traj[0, 1], "s", color="tab:green", ms=6)
    ax.plot(traj[-1, 0], traj[-1, 1], "x", color="tab:red", ms=8)
    ax.set_title("evaluation trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def plot_value_grid(path, layout, xs, ys, values, goals=None, index=None):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    mesh = ax.pcolormesh(xs, ys, values, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="max value over headings")
    draw_maze(ax, layout)
    if goals is not None:
        draw_goals(ax, goals)
        if index is not None:
            gx, gy = goals.goal(index)
            ax.plot(gx, gy, "*", color="w", ms=12, mec="k")
    title = "value field" + (f" (goal {index})" if index else "")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def plot_ablation_curves(path, step_grid, curves):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    steps = np.asarray(step_grid)
    for label, c in sorted(curves.items()):
        mean = np.asarray(c["mean"])
        std = np.asarray(c["std"])
        line, = ax.plot(steps, mean, label=f"{label} (auc={c['auc']:.2f})")
        # half the band for readability
        ax.fill_between(steps, mean - std / 2, mean + std / 2,
                        color=line.get_color(), alpha=0.15)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("fraction of runs solved")
    ax.set_ylim(-0.05, 1.05)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
