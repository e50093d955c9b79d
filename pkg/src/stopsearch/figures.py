"""Report figures rendered straight to files.

Every function takes computed results plus a target path and writes one
PNG; nothing is shown interactively and the date stamp is suppressed so
repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE = {"dpi": 120, "metadata": {"Date": None}}


def _loglog_points(ax, xs, ys, **style):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    keep = (xs > 0) & (ys > 0)
    if keep.any():
        ax.loglog(xs[keep], ys[keep], **style)
    return xs[keep], ys[keep]


def _reference_line(ax, xs, ys, slope, label):
    """Power-law guide anchored at the last point."""
    if xs.shape[0] < 2:
        return
    anchor_x, anchor_y = xs[-1], ys[-1]
    grid = np.array([xs.min(), xs.max()])
    ax.loglog(grid, anchor_y * (grid / anchor_x) ** slope, "k--", lw=0.8, label=label)


def save_qcurves(curves, path) -> None:
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    _loglog_points(left, [m for m, _ in curves.q1], [v for _, v in curves.q1], marker="o", label="bias")
    xs, ys = _loglog_points(
        left, [m for m, _ in curves.q2], [v for _, v in curves.q2], marker="s", label="spread"
    )
    left.set_xlabel("optimization batch size")
    left.set_ylabel("curve value")
    left.legend(fontsize=8)
    xs, ys = _loglog_points(right, [n for n, _ in curves.q3], [v for _, v in curves.q3], marker="o")
    _reference_line(right, xs, ys, -0.5, "slope -1/2")
    right.set_xlabel("fresh batch size")
    right.set_ylabel("evaluation error")
    right.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_budget(curves, path) -> None:
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    xs, ys = _loglog_points(
        ax, [m for m, _ in curves.mn_pairs], [n for _, n in curves.mn_pairs], marker="o"
    )
    _reference_line(ax, xs, ys, 4.0 / 3.0, "slope 4/3")
    ax.set_xlabel("optimization batch size")
    ax.set_ylabel("matched fresh size")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_decomposition(rows, path) -> None:
    by_m = {}
    by_n = {}
    for m, n, bias, spread, ev in rows:
        by_m[m] = (bias, spread)
        by_n[n] = ev
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ms = sorted(by_m)
    _loglog_points(left, ms, [by_m[m][0] for m in ms], marker="o", label="bias term")
    _loglog_points(left, ms, [by_m[m][1] for m in ms], marker="s", label="spread term")
    left.set_xlabel("optimization batch size")
    left.set_ylabel("error term")
    left.legend(fontsize=8)
    ns = sorted(by_n)
    xs, ys = _loglog_points(right, ns, [by_n[n] for n in ns], marker="o")
    _reference_line(right, xs, ys, -0.5, "slope -1/2")
    right.set_xlabel("fresh batch size")
    right.set_ylabel("evaluation term")
    right.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_replicas(stats, path) -> None:
    values = [r.value for r in stats.per_replica]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.plot(range(1, len(values) + 1), values, "o", ms=4)
    ax.axhline(stats.mu, color="k", lw=0.8)
    if stats.vartheta is not None:
        ax.axhspan(stats.mu - stats.vartheta, stats.mu + stats.vartheta, alpha=0.15, color="gray")
    ax.set_xlabel("replica")
    ax.set_ylabel("out-of-sample value")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_learning_curve(curve, theory_slope, path) -> None:
    counts = [m for m, _, _ in curve.rows]
    means = [v for _, v, _ in curve.rows]
    errs = [e for _, _, e in curve.rows]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    keep = [(m, v, e) for m, v, e in zip(counts, means, errs) if v > 0]
    if keep:
        ax.errorbar(
            [m for m, _, _ in keep],
            [v for _, v, _ in keep],
            yerr=[e for _, _, e in keep],
            fmt="o-",
            ms=4,
            lw=0.9,
            capsize=2,
        )
        ax.set_xscale("log")
        ax.set_yscale("log")
        xs = np.array([m for m, _, _ in keep], dtype=np.float64)
        ys = np.array([v for _, v, _ in keep], dtype=np.float64)
        _reference_line(ax, xs, ys, theory_slope, f"slope {theory_slope:.3f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("sample count")
    ax.set_ylabel("mean regret")
    ax.set_title(f"fitted slope {curve.slope:.3f}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
