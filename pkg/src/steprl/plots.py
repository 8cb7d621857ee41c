"""Render training metric curves to image files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

PLOTTABLE = (
    ("mean_training_reward", "training reward"),
    ("mean_total_reward", "total reward (tensor sum)"),
    ("mean_raw_step_reward", "raw step reward"),
    ("valid_judge_rate", "valid judge rate"),
    ("mean_valid_searches", "valid searches per episode"),
    ("mean_response_length", "response length (tokens)"),
)


def read_metrics(path: str | Path) -> list[dict]:
    path = Path(path)
    rows: list[dict] = []
    if path.suffix == ".jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [
                {k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)
            ]
    if not rows:
        raise ValueError(f"no metric rows in {path}")
    return rows


def plot_metrics(metrics_path: str | Path, out_dir: str | Path) -> list[Path]:
    """One PNG per metric curve; returns the written paths."""
    rows = read_metrics(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = [row["step"] for row in rows]
    written = []
    for key, label in PLOTTABLE:
        if key not in rows[0]:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(steps, [row[key] for row in rows], linewidth=1.2)
        ax.set_xlabel("training step")
        ax.set_ylabel(label)
        ax.set_title(label)
        ax.grid(True, alpha=0.3)
        path = out / f"{key}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
