"""Figure rendering for episode logs and ensemble tables.

Everything renders headless (Agg) straight to files next to the delimited
metric output.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _draw_attempt(ax, attempt, camera_size):
    ov = attempt.overlays()
    w, h = camera_size
    for g in ov["goals"]:
        g = np.asarray(g)
        ax.plot(g[:, 0], g[:, 1], "b-", lw=2, label="goal")
    for p in ov["executed"]:
        p = np.asarray(p)
        if len(p):
            ax.plot(p[:, 0], p[:, 1], "k-", lw=0.8, alpha=0.7)
    sev = np.asarray(ov["severed"]).reshape(-1, 2)
    skp = np.asarray(ov["skipped"]).reshape(-1, 2)
    if len(sev):
        ax.plot(sev[:, 0], sev[:, 1], "g.", ms=3, label="severed")
    if len(skp):
        ax.plot(skp[:, 0], skp[:, 1], "rx", ms=5, label="skipped")
    if "keypoints" in ov:
        kp = np.asarray(ov["keypoints"])
        ax.plot(kp[:, 0], kp[:, 1], ".", color="0.6", ms=2)
        if "report_edges" in ov:
            conn = np.asarray(ov["connected"], bool)
            for (i, j), ok in zip(ov["report_edges"], conn):
                c = "0.8" if ok else "m"
                ax.plot([kp[i][0], kp[j][0]], [kp[i][1], kp[j][1]],
                        color=c, lw=0.6)
    for seg in ov.get("proposed", []):
        seg = np.asarray(seg)
        ax.plot(seg[:, 0], seg[:, 1], "c--", lw=1.5, label="proposed")
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_aspect("equal")
    ax.set_title(f"attempt {attempt.index}")


def render_episode(log, out_dir, camera_size=(640, 480)):
    """Figures for one saved episode: overlay per attempt, per-attempt
    metric trends, and the visible-area trace."""
    os.makedirs(out_dir, exist_ok=True)
    n = len(log.attempts)

    fig, axes = plt.subplots(1, n, figsize=(5 * n, 4.2), squeeze=False)
    for ax, a in zip(axes[0], log.attempts):
        _draw_attempt(ax, a, camera_size)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "overlays.png"), dpi=110)
    plt.close(fig)

    idx = [a.index for a in log.attempts]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].plot(idx, [a.metrics.remaining_attachments for a in log.attempts],
                 "o-")
    axes[0].set_ylabel("remaining attachments")
    axes[1].plot(idx, [a.metrics.length_deviation_mm for a in log.attempts],
                 "o-")
    axes[1].set_ylabel("length deviation [mm]")
    axes[2].plot(idx, [a.metrics.effective_cut_ratio for a in log.attempts],
                 "o-", label="effective")
    axes[2].plot(idx, [a.metrics.excessive_cut_ratio for a in log.attempts],
                 "s--", label="excessive")
    axes[2].set_ylabel("cut ratio")
    axes[2].legend(fontsize=8)
    for ax in axes:
        ax.set_xlabel("attempt")
        ax.set_xticks(idx)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "metrics.png"), dpi=110)
    plt.close(fig)

    traces = [a.exposure_visible for a in log.attempts if a.exposure_visible]
    if traces:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for a in log.attempts:
            if a.exposure_visible:
                t = np.asarray(a.exposure_visible)
                ax.plot(t[:, 0], t[:, 1], "-o", ms=3,
                        label=f"attempt {a.index}")
        ax.set_xlabel("retraction step")
        ax.set_ylabel("visible area [px]")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "visible_area.png"), dpi=110)
        plt.close(fig)


def render_ensemble(rows, out_dir, conditions=("feedback", "baseline")):
    """Ensemble figures: per-attempt remaining-attachment medians and
    success-rate bars per condition.

    rows: list of dicts with keys condition, seed, success,
    per_attempt_attachments (list).
    """
    os.makedirs(out_dir, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for cond in conditions:
        per = [r["per_attempt_attachments"] for r in rows
               if r["condition"] == cond]
        if not per:
            continue
        width = max(len(p) for p in per)
        med = [float(np.median([p[min(k, len(p) - 1)] for p in per]))
               for k in range(width)]
        axes[0].plot(np.arange(1, width + 1), med, "o-", label=cond)
    axes[0].set_xlabel("attempt")
    axes[0].set_ylabel("median remaining attachments")
    axes[0].legend(fontsize=8)

    names, rates = [], []
    for cond in conditions:
        got = [r["success"] for r in rows if r["condition"] == cond]
        if got:
            names.append(cond)
            rates.append(100.0 * np.mean(got))
    axes[1].bar(names, rates, color=["C0", "C1"][:len(names)])
    axes[1].set_ylabel("success rate [%]")
    axes[1].set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "ensemble.png"), dpi=110)
    plt.close(fig)
