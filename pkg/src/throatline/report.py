"""Figure rendering for evaluation reports.

The eval path writes matplotlib figures next to the delimited report: a
per-file metric summary and a spectrogram triptych of the first pair.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .audio import SampleBuffer
from .dsp import log_spectrogram
from .metrics import MetricReport

log = logging.getLogger(__name__)


def render_summary_figure(report: MetricReport, path: str | Path) -> Path:
    """Per-file SI-SDR and STOI bars, degraded vs enhanced where present."""
    rows = [r for r in report.rows if r.error is None]
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    names = [Path(r.file).stem for r in rows]
    x = np.arange(len(rows))
    width = 0.38
    for ax, metric, label in (
        (axes[0], "si_sdr", "SI-SDR (dB)"),
        (axes[1], "stoi", "STOI"),
    ):
        deg = [getattr(r, f"{metric}_degraded") for r in rows]
        enh = [getattr(r, f"{metric}_enhanced") for r in rows]
        ax.bar(x - width / 2, deg, width, label="degraded", color="#c26d5a")
        if any(v is not None for v in enh):
            ax.bar(x + width / 2, [v if v is not None else np.nan for v in enh],
                   width, label="enhanced", color="#3f7fbf")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=60, fontsize=7, ha="right")
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3)
        ax.legend(fontsize=8)
    fig.suptitle("Enhancement metrics per file")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_spectrogram_figure(
    clean: SampleBuffer,
    degraded: SampleBuffer,
    enhanced: SampleBuffer | None,
    path: str | Path,
) -> Path:
    """Log-power spectrograms of clean / degraded (/ enhanced) side by side."""
    path = Path(path)
    panels = [("clean", clean), ("degraded", degraded)]
    if enhanced is not None:
        panels.append(("enhanced", enhanced))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.6), squeeze=False)
    for ax, (title, buf) in zip(axes[0], panels):
        spec = log_spectrogram(buf)
        extent = (0.0, len(buf) / buf.sample_rate, 0.0, buf.sample_rate / 2000.0)
        ax.imshow(spec.data.T, origin="lower", aspect="auto", extent=extent,
                  vmin=-80.0, vmax=0.0, cmap="magma")
        ax.set_title(title)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("kHz")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_loss_curve(loss_curve: list[float], path: str | Path, title: str) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.plot(loss_curve, lw=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
