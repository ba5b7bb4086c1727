"""Figure rendering for the report path (written next to CSV/JSON outputs)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_scene_figure(cloud, labels, path, title="scene"):
    """Top and side scatter projections of a cloud, colored by blob label."""
    cloud = np.asarray(cloud)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    color = labels if labels is not None else "tab:blue"
    for ax, (i, j, name) in zip(axes, [(0, 1, "top (x-y)"), (0, 2, "side (x-z)")]):
        ax.scatter(cloud[:, i], cloud[:, j], c=color, s=2, cmap="tab10")
        ax.set_title(name)
        ax.set_aspect("equal")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_enhance_figure(before, after, path):
    """Overlay of input and enhanced clouds in the x-y projection."""
    before, after = np.asarray(before), np.asarray(after)
    moved = np.any(before != after, axis=1)
    fig, ax = plt.subplots(figsize=(6.5, 5))
    ax.scatter(before[:, 0], before[:, 1], s=2, c="0.75", label="input")
    if moved.any():
        ax.scatter(after[moved, 0], after[moved, 1], s=2, c="tab:red",
                   label=f"moved ({moved.sum()})")
    ax.legend(markerscale=4)
    ax.set_aspect("equal")
    ax.set_title("enhanced vs input (x-y)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_flops_figure(curves, path):
    """Stack FLOPs vs sequence length, one line per attention variant.

    ``curves`` maps variant name to (n_seq list, total flops list).
    """
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for variant, (xs, ys) in curves.items():
        ax.plot(xs, np.asarray(ys, dtype=np.float64) / 1e9, marker="o",
                label=variant)
    ax.set_xlabel("sequence length (kept clusters)")
    ax.set_ylabel("stack FLOPs (G)")
    ax.set_title("attention-stack cost vs sequence length")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_figure(rows, target, best, path):
    """Overhead-reduction sweep: every config as a point, target as a line."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for c in sorted({r["c"] for r in rows}):
        sub = [r for r in rows if r["c"] == c]
        ax.scatter([r["n_seq"] for r in sub],
                   [100 * r["reduction"] for r in sub], s=12, alpha=0.6,
                   label=f"C={c}")
    ax.axhline(100 * target, color="k", linestyle="--",
               label=f"target {100 * target:.2f}%")
    ax.scatter([best["n_seq"]], [100 * best["reduction"]], s=90, facecolors="none",
               edgecolors="tab:red", label="closest config")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("block-overhead reduction (%)")
    ax.set_title("proxy vs self attention: overhead-reduction sweep")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_timing_figure(timings, path):
    """Horizontal bar chart of per-stage wall time."""
    names = [t["stage"] for t in timings]
    secs = [t["seconds"] for t in timings]
    fig, ax = plt.subplots(figsize=(6.5, 0.5 + 0.4 * len(names)))
    ax.barh(range(len(names)), secs, color="tab:blue")
    ax.set_yticks(range(len(names)), names)
    ax.invert_yaxis()
    ax.set_xlabel("seconds")
    ax.set_title(f"stage timings (total {sum(secs):.2f} s)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
