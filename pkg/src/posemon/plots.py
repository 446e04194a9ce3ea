"""Matplotlib figures for harness reports (file output only, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import MonitorReport  # noqa: E402
from .metrics import LOSS_NAMES  # noqa: E402

# svg output without random ids or dates, so reruns produce identical files
plt.rcParams["svg.hashsalt"] = "posemon"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, stem: Path, formats) -> list[Path]:
    paths = []
    for ext in formats:
        p = stem.with_suffix(f".{ext}")
        meta = {"Date": None} if ext in ("svg", "pdf") else {}
        fig.savefig(p, format=ext, metadata=meta or None, dpi=100)
        paths.append(p)
    plt.close(fig)
    return paths


def scatter_figures(report: MonitorReport, out_dir, formats=("svg",)) -> list[Path]:
    """One row of four scatters (score vs each true metric) per monitor."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    losses = report.losses()
    paths = []
    for mon in report.polarity:
        x = report.scores(mon)
        fig, axes = plt.subplots(1, len(LOSS_NAMES), figsize=(3.4 * len(LOSS_NAMES), 3.0), layout="constrained")
        levels = np.array([np.nan if r.corruption_level is None else r.corruption_level for r in report.records])
        for ax, (j, metric) in zip(np.atleast_1d(axes), enumerate(LOSS_NAMES)):
            y = losses[:, j]
            ok = np.isfinite(x) & np.isfinite(y)
            c = levels[ok] if np.isfinite(levels[ok]).all() and ok.any() else None
            sc = ax.scatter(x[ok], y[ok], s=6, c=c, cmap="viridis" if c is not None else None, alpha=0.7)
            ax.set_xlabel(f"{mon} score")
            ax.set_ylabel(f"true {metric}")
            ax.grid(alpha=0.3)
        if c is not None:
            fig.colorbar(sc, ax=axes, label="corruption level", fraction=0.02)
        fig.suptitle(f"{mon} ({report.polarity[mon].replace('_', ' ')})")
        paths += _save(fig, out_dir / f"scatter_{mon.replace(':', '_')}", formats)
    return paths


def ablation_figure(rows, out_dir, formats=("svg",)) -> list[Path]:
    """Grouped bars: mean Pearson per head for each ablation variant and eval set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [f"{r['variant']}\n{r['eval_set']}" for r in rows]
    width = 0.8 / len(LOSS_NAMES)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows)), 3.2))
    pos = np.arange(len(rows))
    for j, metric in enumerate(LOSS_NAMES):
        vals = [r["correlations"].get(metric) for r in rows]
        ax.bar(pos + j * width, [np.nan if v is None else v for v in vals], width, label=metric)
    ax.set_xticks(pos + width * (len(LOSS_NAMES) - 1) / 2)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("Pearson with truth")
    ax.axhline(0, color="k", lw=0.5)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out_dir / "ablation", formats)
