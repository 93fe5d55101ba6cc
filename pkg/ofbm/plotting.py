"""Static SVG figures for inspecting a run."""

import os
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from loguru import logger  # noqa: E402

from .errors import InvalidInputError  # noqa: E402
from .paths import GridPath  # noqa: E402

MAX_PLOTTED_PATHS = 20


def _save(fig, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    # no timestamp in the file, so equal inputs give equal SVG text
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote {path}")


def plot_paths(paths: Sequence[GridPath], path: str, title: str = ""):
    """First few replicates, one panel per component."""
    if not paths:
        raise InvalidInputError("no paths to plot")
    d = paths[0].d
    fig, axes = plt.subplots(d, 1, figsize=(7, 2.5 * d), squeeze=False, sharex=True)
    for k in range(d):
        ax = axes[k, 0]
        for p in paths[:MAX_PLOTTED_PATHS]:
            ax.plot(p.grid, p.values[:, k], linewidth=0.8)
        ax.set_ylabel(f"x_{k + 1}")
    axes[-1, 0].set_xlabel("t")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_errors(report: dict, path: str):
    """Covariance distances per level on log axes."""
    levels: List[dict] = report.get("levels", [])
    if not levels:
        raise InvalidInputError("report has no levels")
    x = [lv["level"] for lv in levels]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, [lv["limit_max_abs_err"] for lv in levels], marker="o", label="empirical vs limit")
    if all("oracle_limit_distance" in lv for lv in levels):
        ax.plot(x, [max(lv["oracle_limit_distance"], 1e-300) for lv in levels], marker="s",
                label="oracle vs limit")
    ax.plot(x, [lv["max_se"] for lv in levels], linestyle="--", label="max standard error")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("level")
    ax.set_ylabel("max |covariance error|")
    ax.set_title(f"{report.get('scheme', '')} convergence")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
