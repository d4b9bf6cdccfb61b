"""Report figures, rendered off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import auc_thresholds, pck_curve  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_SAVE = dict(dpi=100, metadata={"Software": None})


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_loss_curve(rows: list[dict], path: str | Path) -> Path:
    """Loss terms (log scale) against iteration."""
    fig, ax = plt.subplots(figsize=(6, 4))
    its = [r["iteration"] for r in rows]
    for key in ("l_heatmap", "l_joints", "l_translation", "l_hand_pose", "l_object_pose", "total"):
        values = np.array([r[key] for r in rows], dtype=np.float64)
        if np.any(values > 0):
            ax.plot(its, np.where(values > 0, values, np.nan), label=key, lw=1.8 if key == "total" else 1.0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_pck(curves: dict[str, np.ndarray], path: str | Path, max_threshold: float = 50.0,
             steps: int = 100) -> Path:
    """PCK curves for per-joint error arrays, one line per label."""
    th = auc_thresholds(max_threshold, steps)
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, errors in curves.items():
        ax.plot(th, pck_curve(errors, th), label=label)
    ax.set_xlabel("threshold (synthetic-mm)")
    ax.set_ylabel("fraction of joints")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ablation(rows: list[dict], metrics: tuple[str, ...], path: str | Path) -> Path:
    """Grouped bars: one group per metric, one bar per variant."""
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(rows), 1)
    x = np.arange(len(metrics))
    for i, row in enumerate(rows):
        values = [row[m] if row[m] is not None else np.nan for m in metrics]
        ax.bar(x + i * width, values, width, label=row["variant"])
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(metrics, rotation=20, fontsize=8)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)
