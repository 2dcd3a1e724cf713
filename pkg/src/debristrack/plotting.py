"""Static figures: metric bars, intensity histograms, GT/prediction overlays."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from . import dataset_io  # noqa: E402
from .metrics import TABLE_COLUMNS  # noqa: E402

GT_COLOR = "lime"
PRED_COLOR = "red"


def plot_report(report_path, out_dir) -> list:
    data = json.loads(Path(report_path).read_text())
    agg = data["aggregate"]
    cols = [c for c in TABLE_COLUMNS if c != "IDS"]
    vals = [100 * (agg[c] if agg[c] is not None else float("nan")) for c in cols]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(cols, vals, color="tab:blue")
    for x, v in enumerate(vals):
        ax.text(x, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_ylim(0, 110)
    ax.set_ylabel("%")
    ax.set_title(f"IDS = {agg['IDS']}")
    out = Path(out_dir) / "metrics.png"
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return [out]


def _draw_boxes(ax, boxes, color):
    for x0, y0, x1, y1 in boxes:
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, edgecolor=color, linewidth=1))


def plot_sequence(seq_dir, out_dir, pred_csv=None) -> list:
    """Per-frame overlays (GT green, prediction red) and a debris/background intensity histogram."""
    seq_dir, out_dir = Path(seq_dir), Path(out_dir)
    frames, ann = dataset_io.read_sequence(seq_dir)
    preds = dataset_io.read_results_csv(pred_csv) if pred_csv and Path(pred_csv).exists() else []
    written = []
    for t, (img, objs) in enumerate(zip(frames, ann.objects), start=1):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(img, cmap="gray", vmin=0, vmax=255)
        _draw_boxes(ax, [o.bbox for o in objs], GT_COLOR)
        _draw_boxes(ax, [r.bbox for r in preds if r.frame == t], PRED_COLOR)
        ax.set_axis_off()
        out = out_dir / f"{seq_dir.name}_{t:06d}.png"
        fig.savefig(out, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(out)

    if ann.masks is not None:
        debris = np.concatenate([f[m] for f, m in zip(frames, ann.masks)]).astype(float)
        back = np.concatenate([f[~m] for f, m in zip(frames, ann.masks)]).astype(float)
        fig, ax = plt.subplots(figsize=(6, 3.5))
        bins = np.arange(0, 257, 4)
        ax.hist(back, bins=bins, density=True, alpha=0.6, label="background")
        if debris.size:
            ax.hist(debris, bins=bins, density=True, alpha=0.6, label="debris")
        ax.set_xlabel("intensity")
        ax.legend()
        out = out_dir / f"{seq_dir.name}_intensity.png"
        fig.tight_layout()
        fig.savefig(out, dpi=100)
        plt.close(fig)
        written.append(out)
    return written
