"""Matplotlib rendering for traces, training curves, and evaluation reports.

All functions write straight to file (Agg backend); nothing opens a window.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

AGENT_CMAP = plt.get_cmap("tab10")


def _draw_map(ax, bundle):
    for edge in bundle.road_edges:
        edge = np.asarray(edge)
        ax.plot(edge[:, 0], edge[:, 1], color="firebrick", lw=1.2, zorder=1)
    for pts, crossable in bundle.lane_boundaries:
        pts = np.asarray(pts)
        style = (0, (4, 3)) if crossable else "solid"
        ax.plot(pts[:, 0], pts[:, 1], color="lightskyblue", lw=0.8, ls=style, zorder=1)
    for lane in bundle.lanes:
        line = np.asarray(lane.centerline)
        ax.plot(line[:, 0], line[:, 1], color="0.8", lw=0.6, zorder=0)


def render_trajectories(bundle, trajectories, path, goals=None):
    """Overhead plot of agent trajectories over the map geometry (SVG-friendly)."""
    fig, ax = plt.subplots(figsize=(10, 4))
    _draw_map(ax, bundle)
    for i, traj in enumerate(trajectories):
        traj = np.asarray(traj)
        color = AGENT_CMAP(i % 10)
        if traj.size:
            ax.plot(traj[:, 1], traj[:, 2], color=color, lw=1.6, zorder=3,
                    label="agent %d" % i)
            ax.plot(traj[0, 1], traj[0, 2], marker="o", color=color, ms=5, zorder=4)
    if goals is not None:
        for i, goal in enumerate(goals):
            ax.plot(goal[0], goal[1], marker="*", color=AGENT_CMAP(i % 10), ms=10, zorder=4)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if trajectories:
        ax.legend(loc="upper right", fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_training_curves(metrics_rows, path):
    """Reward / event-rate / curriculum curves from the metrics log."""
    rows = np.asarray(metrics_rows, dtype=float)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    if rows.size:
        steps = rows[:, 1]
        axes[0].plot(steps, rows[:, 3], color="tab:blue")
        axes[0].set_title("mean reward")
        axes[1].plot(steps, rows[:, 4], label="goal", color="tab:green")
        axes[1].plot(steps, rows[:, 5], label="at-fault", color="tab:red")
        axes[1].plot(steps, rows[:, 7], label="early term", color="tab:orange")
        axes[1].set_ylim(-0.02, 1.02)
        axes[1].legend(fontsize=7)
        axes[1].set_title("episode rates")
        axes[2].plot(steps, rows[:, 2], color="tab:purple")
        axes[2].set_ylim(-0.02, 1.02)
        axes[2].set_title("curriculum progress")
    for ax in axes:
        ax.set_xlabel("environment steps")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_metric_histogram(per_scenario, path):
    """Distribution of per-scenario scores from an evaluation run."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    keys = ["GR", "SR", "CR_a", "CR_r"]
    colors = ["tab:green", "tab:blue", "tab:red", "tab:orange"]
    bins = np.linspace(0, 100, 21)
    for key, color in zip(keys, colors):
        vals = [row[key] for row in per_scenario]
        ax.hist(vals, bins=bins, histtype="step", label=key, color=color)
    ax.set_xlabel("per-scenario rate [%]")
    ax.set_ylabel("scenarios")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
