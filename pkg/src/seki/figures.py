"""Rendering of figure-series CSVs (solver,k_b,x,y) to PNG files."""

from __future__ import annotations

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_series(path) -> dict:
    series = defaultdict(lambda: ([], []))
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            xs, ys = series[(row["solver"], row["k_b"])]
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
    return series


def render_series_csv(csv_path, png_path, xlabel: str = "x",
                      ylabel: str = "y") -> None:
    series = read_series(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for (solver, kb), (xs, ys) in sorted(series.items()):
        label = solver if kb in ("0", 0) else f"{solver} (k_b={kb})"
        ax.plot(xs, ys, label=label, linewidth=1.2)
    ax.set_xlabel(xlabel.replace("_", " "))
    ax.set_ylabel(ylabel.replace("_", " "))
    if xlabel != "iteration":
        ax.set_xscale("symlog", linthresh=1.0)
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
