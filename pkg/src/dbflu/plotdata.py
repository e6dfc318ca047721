"""Tidy tables and minimal static charts for the standard result figures.

Each ``figN_*`` function returns a DataFrame; :func:`write_figure` writes
it as CSV next to an SVG chart of the same name.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .backtest import CoverageReport, mse_typicality
from .data import SeasonPanel
from .forecast import PredictiveTrajectorySet
from .model import infectious_curves
from .priors import SeasonSirFit


def fig1_wili(panel: SeasonPanel) -> pd.DataFrame:
    """wILI by season and week."""
    rows = [(s, t + 1, v) for j, s in enumerate(panel.seasons)
            for t, v in enumerate(panel.values[j]) if np.isfinite(v)]
    return pd.DataFrame(rows, columns=["season", "week", "wili"])


def fig2_mse(panel: SeasonPanel) -> pd.DataFrame:
    """Season MSE against the other seasons' week-wise mean, descending."""
    return mse_typicality(panel)


def fig4_sir_fits(panel: SeasonPanel, fits: Iterable[SeasonSirFit]) -> pd.DataFrame:
    """Observed wILI alongside each season's fitted infectious curve."""
    rows = []
    for f in fits:
        if f.season not in panel.seasons:
            continue
        y = panel.season_values(f.season)
        p = f.params
        curve = infectious_curves(p.i0, p.beta, p.rho, panel.T, p.s0)[0]
        for t in range(panel.T):
            rows.append((f.season, t + 1, y[t], curve[t]))
    return pd.DataFrame(rows, columns=["season", "week", "wili", "fitted"])


def fig6_forecast(pset: PredictiveTrajectorySet, truth=None, level: float = 0.95) -> pd.DataFrame:
    """Predictive mean and pointwise interval for one fitted season-week."""
    lo, hi = pset.interval(level)
    df = pd.DataFrame({"week": np.arange(1, pset.T + 1), "observed": pset.observed,
                       "mean": pset.mean(), "lower": lo, "upper": hi})
    if truth is not None:
        df["truth"] = np.asarray(truth, dtype=float)
    df.insert(0, "fit", f"{pset.season}.{pset.through_week}")
    return df


def fig9_coverage(report: CoverageReport) -> pd.DataFrame:
    """Coverage by each partition, stacked in long form."""
    parts = []
    for key, tab in report.partitions().items():
        t = tab.rename(columns={key: "level_value"})
        t.insert(0, "partition", key)
        parts.append(t)
    return pd.concat(parts, ignore_index=True)


def fig11_scores(summaries: Mapping[str, Mapping[str, float]]) -> pd.DataFrame:
    """Mean log score per model and target, with an overall column."""
    rows = [(m, t, v) for m, per in summaries.items() for t, v in per.items()]
    df = pd.DataFrame(rows, columns=["model", "target", "log_score"])
    return df.sort_values(["target", "log_score"], ascending=[True, False], ignore_index=True)


# -- charts ------------------------------------------------------------------

def _chart(name: str, df: pd.DataFrame, ax) -> None:
    fig = name.split("_")[0]
    if fig in ("fig1", "fig4"):
        for s, g in df.groupby("season"):
            ax.plot(g["week"], g["wili"], lw=0.8, label=str(s))
            if "fitted" in g:
                ax.plot(g["week"], g["fitted"], color="k", lw=0.6)
        ax.set_xlabel("season week")
        ax.set_ylabel("wILI")
    elif fig == "fig2":
        ax.barh(df["season"].astype(str), df["mse"])
        ax.invert_yaxis()
        ax.set_xlabel("MSE")
    elif fig == "fig6":
        ax.fill_between(df["week"], df["lower"], df["upper"], color="0.8")
        ax.plot(df["week"], df["mean"], color="k", lw=1)
        if "truth" in df:
            ax.plot(df["week"], df["truth"], "o", ms=2)
        ax.set_xlabel("season week")
        ax.set_ylabel("wILI")
    elif fig == "fig9":
        for key, g in df.groupby("partition"):
            ax.plot(g["level_value"].astype(float), g["coverage"], "o", ms=2, label=key)
        ax.axhline(0.95, color="k", lw=0.5)
        ax.set_ylabel("coverage")
    elif fig == "fig11":
        piv = df.pivot(index="model", columns="target", values="log_score")
        for t in piv.columns:
            ax.plot(piv.index, piv[t], "o", ms=3, label=t)
        ax.set_ylabel("mean log score")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=5, ncol=2)


def write_figure(name: str, df: pd.DataFrame, out) -> tuple[Path, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dbflu"

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    svg_path = out / f"{name}.svg"
    df.to_csv(csv_path, index=False)
    fig, ax = plt.subplots(figsize=(6, 4))
    _chart(name, df, ax)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return csv_path, svg_path
