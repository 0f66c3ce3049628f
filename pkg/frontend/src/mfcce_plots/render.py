"""Render the solver's figure CSVs into images.

Strictly computation-free: every plotted number originates in the input CSV
(the solver is the single source of numerical truth).  The only operations
performed here are column selection, comparisons for the region shading,
and an argmax to locate the marked row of the trade-off table.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "load_columns", "render", "in_region"]


SCHEMAS = {
    1: ["t", "running_cce", "running_mfc", "running_ne", "total_cce", "total_mfc", "total_ne"],
    2: ["t", "mu_mean_cce", "xbar_mfc", "m_ne"],
    3: ["z1", "sigma2_lower", "sigma2_upper"],
    4: ["eps", "ratio"],
    5: [
        "z1", "payoff_cce", "payoff_mfc", "payoff_ne",
        "abatement_cce", "abatement_mfc", "abatement_ne",
    ],
}

LABELS = {
    1: {"x": "t", "y": "running expected utility", "legend": ["CCE", "MFC", "NE"]},
    2: {"x": "t", "y": "average cumulated abatement", "legend": ["CCE", "MFC", "NE"]},
    3: {"x": "z1", "y": "sigma_z^2", "legend": ["optimality bound", "outperformance bound"]},
    4: {"x": "eps", "y": "-c_M / c_V", "legend": []},
    5: {"x": "z1", "y": "expected payoff", "legend": ["CCE", "MFC", "NE"]},
}


class SchemaError(ValueError):
    """Input CSV does not match the figure schema; names the missing column."""


@dataclass
class FigureSpec:
    which: int
    input_csv: str
    output: str
    dpi: int = 150
    figsize: tuple = (8.0, 5.0)
    title: str | None = None

    def __post_init__(self):
        if self.which not in SCHEMAS:
            raise ValueError(f"figure id must be one of {sorted(SCHEMAS)}, got {self.which}")


def load_columns(path: str, which: int) -> dict[str, np.ndarray]:
    """Parse the CSV and check it against the figure schema."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in SCHEMAS[which]:
            if col not in header:
                raise SchemaError(f"figure {which} input is missing column {col!r}")
        rows = list(reader)
    out = {}
    for col in SCHEMAS[which]:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())
    return digest.hexdigest()


def in_region(lower: np.ndarray, upper: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """The shading predicate used for the region figure."""
    return (lower <= sigma2) & (sigma2 <= upper)


def _legend_styles():
    return (
        {"color": "tab:green", "lw": 2},
        {"color": "tab:orange", "lw": 2, "ls": "--"},
        {"color": "tab:blue", "lw": 2, "ls": ":"},
    )


def render(spec: FigureSpec) -> dict:
    """Write the image; returns the output path and a checksum of exactly
    the numbers that were drawn (equal to the parsed-column checksum)."""
    cols = load_columns(spec.input_csv, spec.which)
    labels = LABELS[spec.which]

    if spec.which == 5:
        fig, axes = plt.subplots(1, 2, figsize=(spec.figsize[0] * 1.5, spec.figsize[1]))
    else:
        fig, ax = plt.subplots(figsize=spec.figsize)
        axes = [ax]

    if spec.which == 1:
        t = cols["t"]
        for key, style, name in zip(
            ("running_cce", "running_mfc", "running_ne"), _legend_styles(), labels["legend"]
        ):
            axes[0].plot(t, cols[key], label=name, **style)
        for key, style in zip(("total_cce", "total_mfc", "total_ne"), _legend_styles()):
            axes[0].scatter([t[-1]], [cols[key][-1]], color=style["color"], marker="o", zorder=3)
        axes[0].legend()
    elif spec.which == 2:
        t = cols["t"]
        for key, style, name in zip(
            ("mu_mean_cce", "xbar_mfc", "m_ne"), _legend_styles(), labels["legend"]
        ):
            axes[0].plot(t, cols[key], label=name, **style)
        axes[0].legend()
    elif spec.which == 3:
        z1 = cols["z1"]
        lower, upper = cols["sigma2_lower"], cols["sigma2_upper"]
        band = in_region(lower, upper, upper)  # where the band is nonempty
        axes[0].plot(z1, lower, color="tab:blue", lw=2, label=labels["legend"][0])
        axes[0].plot(z1, upper, color="tab:red", lw=2, label=labels["legend"][1])
        axes[0].fill_between(z1, lower, upper, where=(lower <= upper), color="tab:green", alpha=0.3)
        if len(z1) < 2 or not np.any(band & (upper > 0)):
            axes[0].annotate(
                "region empty", xy=(0.5, 0.5), xycoords="axes fraction",
                ha="center", fontsize=14,
            )
        axes[0].legend()
    elif spec.which == 4:
        axes[0].plot(cols["eps"], cols["ratio"], color="tab:blue", lw=2)
    else:  # 5
        z1 = cols["z1"]
        peak = int(np.argmax(cols["payoff_cce"]))
        for axis, keys, ylab in (
            (axes[0], ("payoff_cce", "payoff_mfc", "payoff_ne"), labels["y"]),
            (axes[1], ("abatement_cce", "abatement_mfc", "abatement_ne"), "average cumulated abatement"),
        ):
            for key, style, name in zip(keys, _legend_styles(), labels["legend"]):
                axis.plot(z1, cols[key], label=name, **style)
            axis.axvline(z1[peak], color="gray", lw=1.5)
            axis.set_xlabel(labels["x"])
            axis.set_ylabel(ylab)
            axis.legend()

    for axis in axes:
        if spec.which != 5:
            axis.set_xlabel(labels["x"])
            axis.set_ylabel(labels["y"])
        axis.grid(True, alpha=0.3)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=spec.dpi)
    plt.close(fig)

    result = {"output": str(out), "checksum": checksum(cols)}
    if spec.which == 5:
        result["marker_z1"] = float(cols["z1"][int(np.argmax(cols["payoff_cce"]))])
    return result
