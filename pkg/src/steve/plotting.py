"""Static figures written from run-directory CSV files."""

from __future__ import annotations

import csv
from datetime import datetime
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_losses(metrics_csv, out_path) -> Path:
    rows = _read_csv(metrics_csv)
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(10, 3.5))
    for key in ("L_P", "L_S", "L_D", "L_O"):
        ax_loss.plot(epochs, [float(r[key]) for r in rows], label=key)
    ax_loss.set_xlabel("epoch")
    ax_loss.legend()
    ax_val.plot(epochs, [float(r["val_MAE"]) for r in rows], color="k")
    ax_val.set_xlabel("epoch")
    ax_val.set_ylabel("validation MAE")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_scenarios(results_csv, out_path) -> Path:
    """Bar chart of MAE per scenario; accepts results.csv or an ablation table."""
    rows = _read_csv(results_csv)
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows)), 3.5))
    if "variant" in rows[0]:
        scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
        variants = list(dict.fromkeys(r["variant"] for r in rows))
        width = 0.8 / len(variants)
        for i, v in enumerate(variants):
            vals = [next(float(r["MAE"]) for r in rows if r["variant"] == v and r["scenario"] == s)
                    for s in scenarios]
            ax.bar(np.arange(len(scenarios)) + i * width, vals, width, label=v)
        ax.set_xticks(np.arange(len(scenarios)) + 0.4 - width / 2, scenarios, rotation=45, ha="right")
        ax.legend(fontsize="small")
    else:
        ax.bar([r["scenario"] for r in rows], [float(r["MAE"]) for r in rows])
        ax.tick_params(axis="x", rotation=45)
    ax.set_ylabel("MAE")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def prior_grid(alpha_csv, holiday_dates=(), prior: str = "alpha1") -> np.ndarray:
    """Mean prior per (workday/holiday row, hour-of-day column); NaN where unseen."""
    hols = set(holiday_dates)
    total = np.zeros((2, 24))
    count = np.zeros((2, 24))
    for r in _read_csv(alpha_csv):
        when = datetime.fromisoformat(r["sample_time"])
        row = int(when.weekday() >= 5 or when.date() in hols)
        total[row, when.hour] += float(r[prior])
        count[row, when.hour] += 1
    with np.errstate(invalid="ignore"):
        return total / count


def plot_priors(alpha_csv, out_path, holiday_dates=()) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(9, 3), sharex=True)
    for ax, key in zip(axes, ("alpha1", "alpha2")):
        im = ax.imshow(prior_grid(alpha_csv, holiday_dates, key), aspect="auto", vmin=0, vmax=1, cmap="viridis")
        ax.set_yticks([0, 1], ["workday", "holiday"])
        ax.set_title(key, fontsize="small")
    axes[-1].set_xlabel("hour of day")
    fig.colorbar(im, ax=axes)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
