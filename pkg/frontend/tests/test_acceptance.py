"""Secondary acceptance: the figure pipeline end to end.

Criterion: CSVs for figure ids 1-5 render without error; the region shading
agrees with the parabola inequality on 1000 sampled points; the trade-off
marker equals the maximizing row of the CSV.
"""

import csv
import subprocess
import sys

import numpy as np
import pytest

from mfcce_plots import FigureSpec, in_region, load_columns, render

MODEL = """
[model]
T = 5.0

[abatement]
a = 2.0
b = 1.0
eps = 1.0

[initial]
nu1 = 0.1

[law]
z1 = 0.6
sigma_z2 = 0.06
"""


def test_criterion_9_figure_pipeline(tmp_path):
    model = tmp_path / "bench.model"
    model.write_text(MODEL)
    for which in range(1, 6):
        proc = subprocess.run(
            [
                sys.executable, "-m", "mfcce.cli", "figure",
                "--model", str(model), "--which", str(which),
                "--out", str(tmp_path), "--grid-n", "500",
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        out = tmp_path / f"fig{which}.png"
        result = render(
            FigureSpec(which=which, input_csv=str(tmp_path / f"fig{which}.csv"), output=str(out))
        )
        assert out.exists() and out.stat().st_size > 0
        if which == 3:
            cols = load_columns(str(tmp_path / "fig3.csv"), 3)
            rng = np.random.default_rng(42)
            idx = rng.integers(0, len(cols["z1"]), size=1000)
            s2 = rng.uniform(0.0, float(cols["sigma2_upper"].max()) * 1.5, size=1000)
            shaded = in_region(cols["sigma2_lower"][idx], cols["sigma2_upper"][idx], s2)
            direct = (cols["sigma2_lower"][idx] <= s2) & (s2 <= cols["sigma2_upper"][idx])
            agreement = float(np.mean(shaded == direct))
            assert agreement == 1.0, f"point-in-region agreement {agreement:.3%}"
        if which == 5:
            with open(tmp_path / "fig5.csv") as fh:
                rows = list(csv.DictReader(fh))
            payoffs = [float(r["payoff_cce"]) for r in rows]
            z_star_row = float(rows[int(np.argmax(payoffs))]["z1"])
            assert result["marker_z1"] == z_star_row
    print("PASS criterion 9: figure pipeline (ids 1-5, shading, trade-off marker)")
