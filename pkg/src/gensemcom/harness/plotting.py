"""SVG line charts of experiment CSVs."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "gensemcom"  # stable element ids
    return plt


def _save(plt, fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_case_study(csv_path: Path, out_dir: Path) -> list[Path]:
    rows = _read(csv_path)
    plt = _figure()
    written = []
    for metric, label in (("iou_mean", "mean IoU"), ("psnr_db", "PSNR (dB)")):
        series = defaultdict(lambda: defaultdict(list))
        for r in rows:
            series[int(r["offload_steps"])][float(r["snr_db"])].append(float(r[metric]))
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for k in sorted(series):
            snrs = sorted(series[k])
            ax.plot(snrs, [np.mean(series[k][s]) for s in snrs], marker="o", label=f"offload {k}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(label)
        ax.legend()
        written.append(_save(plt, fig, out_dir / f"case_study_{metric}.svg"))
    return written


def plot_fl(csv_path: Path, out_dir: Path) -> list[Path]:
    rows = _read(csv_path)
    plt = _figure()
    curves = defaultdict(lambda: defaultdict(list))
    for r in rows:
        curves[r["client_id"]][int(r["round"])].append(float(r["loss"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for who in sorted(curves):
        rounds = sorted(curves[who])
        ax.plot(rounds, [np.mean(curves[who][t]) for t in rounds], lw=2.0 if who == "cluster" else 1.0, label=who)
    ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel("general-phase loss")
    ax.legend()
    return [_save(plt, fig, out_dir / "fl_losses.svg")]


PLOTTERS = {"case_study.csv": plot_case_study, "fl_losses.csv": plot_fl}


def plot_all(out_dir) -> list[Path]:
    """Plot every known CSV present in ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    for name, fn in PLOTTERS.items():
        if (out_dir / name).exists():
            written += fn(out_dir / name, out_dir)
    return written
