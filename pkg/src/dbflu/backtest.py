"""Leave-one-season-out sequential forecasting, coverage and season typicality.

A cell ``(season, week)`` fits the model to every other season's data
plus ``season`` through ``week``; its SIR prior is refitted without
``season``. Outputs live in ``<out>/cells/<season>.<week>/`` and each
cell directory appears atomically, so an interrupted run resumes by
skipping finished cells.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import forecast as fc
from . import mmwr
from ._io import save_npz
from .data import SeasonPanel, VintageStore
from .mcmc import (SamplerConfig, convergence_report, sample_posterior, save_draws_npz,
                   write_report)
from .model import DataModelConfig, PriorConstants
from .priors import SeasonSirFit, TruncatedMvnPrior, fit_prior, fit_sir_to_season

WEEK_RANGE = (3, 30)
VINTAGES = ("final", "faithful")


def cell_seed(base_seed: int, season: int, week: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{season}:{week}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def cell_name(season: int, week: int) -> str:
    return f"{season}.{week:02d}"


@dataclass(frozen=True)
class BacktestPlan:
    """Which cells to fit and how.

    ``prior`` overrides the per-cell empirical prior (used with synthetic
    panels whose generating prior is known).
    """

    seasons: tuple[int, ...]
    weeks: tuple[int, ...] = tuple(range(WEEK_RANGE[0], WEEK_RANGE[1] + 1))
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig.for_mode("ci"))
    vintage: str = "final"
    base_seed: int = 0
    baseline: float = fc.BASELINE
    level: float = 0.95
    archive_draws: bool = False
    prior: TruncatedMvnPrior | None = None
    model: DataModelConfig = field(default_factory=DataModelConfig)
    constants: PriorConstants = field(default_factory=PriorConstants)

    def __post_init__(self):
        object.__setattr__(self, "seasons", tuple(int(s) for s in self.seasons))
        object.__setattr__(self, "weeks", tuple(int(w) for w in self.weeks))
        if any(not WEEK_RANGE[0] <= w <= WEEK_RANGE[1] for w in self.weeks):
            raise ValueError(f"plan weeks must lie in {WEEK_RANGE[0]}..{WEEK_RANGE[1]}")
        if len(set(self.weeks)) != len(self.weeks):
            raise ValueError("duplicate plan weeks")
        if self.vintage not in VINTAGES:
            raise ValueError(f"vintage must be one of {VINTAGES}")

    def cells(self) -> list[tuple[int, int]]:
        return [(s, w) for s in self.seasons for w in self.weeks]


@dataclass
class BacktestResult:
    out: Path
    completed: list[tuple[int, int]]
    skipped: list[tuple[int, int]]
    failures: dict[tuple[int, int], str]


class _FitCache:
    """Per-season SIR fits keyed by the exact data they were fitted to."""

    def __init__(self):
        self._fits: dict[tuple[int, bytes], SeasonSirFit] = {}

    def get(self, season: int, values: np.ndarray) -> SeasonSirFit:
        key = (season, np.nan_to_num(values, nan=-1.0).tobytes())
        if key not in self._fits:
            self._fits[key] = fit_sir_to_season(values, season=season)
        return self._fits[key]


def cell_panel(plan: BacktestPlan, store: VintageStore, season: int, week: int) -> SeasonPanel:
    """Data visible to cell ``(season, week)``, target season masked after ``week``."""
    if plan.vintage == "faithful":
        panel = store.as_of(mmwr.season_week_epiweek(season, week))
    else:
        panel = store.final()
    return panel.masked(season, week)


def cell_prior(plan: BacktestPlan, panel: SeasonPanel, season: int,
               cache: _FitCache) -> TruncatedMvnPrior:
    if plan.prior is not None:
        return plan.prior
    fits = [cache.get(s, panel.season_values(s)) for s in panel.seasons if s != season]
    return fit_prior(fits, exclude=season)


def run_cell(plan: BacktestPlan, store: VintageStore, season: int, week: int, dest: Path,
             cache: _FitCache | None = None) -> None:
    """Fit one cell and write its outputs into ``dest`` (which must not exist)."""
    cache = cache or _FitCache()
    panel = cell_panel(plan, store, season, week)
    prior = cell_prior(plan, panel, season, cache)
    seed = cell_seed(plan.base_seed, season, week)
    sampler = SamplerConfig(plan.sampler.n_chains, plan.sampler.n_iter,
                            plan.sampler.burn_in_fraction, plan.sampler.thin, seed,
                            plan.sampler.adapt_window)
    draws = sample_posterior(panel, prior, sampler, model=plan.model, constants=plan.constants)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    pset = fc.predictive_simulate(draws, panel, season, week, rng)
    tmp = Path(tempfile.mkdtemp(prefix=f".{dest.name}-", dir=dest.parent))
    try:
        fc.write_submission(fc.forecast_all(pset, plan.baseline), tmp / "submission.csv")
        fc.write_intervals(pset, tmp / "intervals.csv", plan.level)
        save_npz(tmp / "predictive.npz", samples=pset.samples, observed=pset.observed,
                 season=season, week=week)
        write_report(convergence_report(draws), tmp / "convergence.txt")
        if plan.archive_draws:
            save_draws_npz(draws, tmp / "draws.npz")
        os.replace(tmp, dest)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run_backtest(plan: BacktestPlan, store: VintageStore, out, workers: int = 1) -> BacktestResult:
    """Run every cell of ``plan``, skipping cells already on disk.

    A failing cell is recorded in ``failures.csv`` and the run carries on.
    """
    out = Path(out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    cache = _FitCache()
    todo, skipped = [], []
    for s, w in plan.cells():
        (skipped if (cells_dir / cell_name(s, w)).is_dir() else todo).append((s, w))
    if plan.prior is None:
        # warm the fit cache serially so worker threads only read it
        for s, w in todo:
            try:
                panel = cell_panel(plan, store, s, w)
            except Exception:
                continue  # the cell itself records the failure
            for other in panel.seasons:
                if other != s:
                    cache.get(other, panel.season_values(other))
    failures: dict[tuple[int, int], str] = {}
    completed = []

    def job(cell):
        s, w = cell
        try:
            run_cell(plan, store, s, w, cells_dir / cell_name(s, w), cache)
            return cell, None
        except Exception as exc:  # recorded, the run continues
            return cell, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for cell, err in pool.map(job, todo):
            if err is None:
                completed.append(cell)
            else:
                failures[cell] = err
    with (out / "failures.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("season", "week", "error"))
        for (s, w), err in sorted(failures.items()):
            wr.writerow((s, w, err.splitlines()[0]))
    (out / "plan.json").write_text(json.dumps(
        {"seasons": plan.seasons, "weeks": plan.weeks, "vintage": plan.vintage,
         "base_seed": plan.base_seed, "n_chains": plan.sampler.n_chains,
         "n_iter": plan.sampler.n_iter, "thin": plan.sampler.thin,
         "burn_in_fraction": plan.sampler.burn_in_fraction, "level": plan.level}, indent=2))
    return BacktestResult(out, completed, skipped, failures)


def load_predictive(out) -> list[fc.PredictiveTrajectorySet]:
    """Predictive sets of every finished cell under a backtest directory."""
    sets = []
    for d in sorted((Path(out) / "cells").iterdir()):
        f = d / "predictive.npz"
        if d.name.startswith(".") or not f.exists():
            continue
        with np.load(f) as z:
            sets.append(fc.PredictiveTrajectorySet(int(z["season"]), int(z["week"]),
                                                   z["samples"], z["observed"]))
    return sets


# -- coverage ----------------------------------------------------------------

PARTITIONS = ("season", "target_week", "fit_week", "ahead")


@dataclass(frozen=True)
class CoverageReport:
    """One row per pointwise forecast, plus coverage rates by partition."""

    records: pd.DataFrame
    level: float

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def overall(self) -> float:
        return float(self.records["inside"].mean())

    def by(self, key: str) -> pd.DataFrame:
        if key not in PARTITIONS:
            raise ValueError(f"partition must be one of {PARTITIONS}")
        g = self.records.groupby(key)["inside"]
        return pd.DataFrame({"n": g.size(), "covered": g.sum(), "coverage": g.mean()}).reset_index()

    def partitions(self) -> dict[str, pd.DataFrame]:
        return {k: self.by(k) for k in PARTITIONS}

    def write(self, out) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.records.to_csv(out / "coverage_records.csv", index=False)
        for k, tab in self.partitions().items():
            tab.to_csv(out / f"coverage_by_{k}.csv", index=False)
        (out / "coverage_overall.txt").write_text(
            f"level = {self.level}\nn = {self.n}\ncoverage = {self.overall:.6f}\n")


def coverage_report(forecasts: Iterable[fc.PredictiveTrajectorySet], truths: SeasonPanel,
                    level: float = 0.95) -> CoverageReport:
    """Pointwise coverage of equal-tailed predictive intervals.

    Every week after the fit week with a final-vintage value counts as one
    forecast.
    """
    rows = []
    for p in forecasts:
        y = truths.season_values(p.season)
        lo, hi = p.interval(level)
        for t in range(p.through_week, p.T):
            if np.isfinite(y[t]):
                rows.append((p.season, t + 1, p.through_week, t + 1 - p.through_week,
                             bool(lo[t] <= y[t] <= hi[t])))
    df = pd.DataFrame(rows, columns=["season", "target_week", "fit_week", "ahead", "inside"])
    return CoverageReport(df, level)


def forecast_count(n_weeks_with_truth: int, weeks: Sequence[int] = range(3, 31)) -> int:
    """Pointwise forecasts from a season whose first ``n_weeks_with_truth`` weeks are known."""
    return sum(max(n_weeks_with_truth - w, 0) for w in weeks)


# -- season typicality -------------------------------------------------------

def mse_typicality(panel: SeasonPanel) -> pd.DataFrame:
    """MSE of each season against the week-wise mean of the other seasons.

    Weeks count when the season and at least one other season are
    observed. Rows are sorted by decreasing MSE.
    """
    if len(panel.seasons) < 3:
        raise ValueError("need at least 3 seasons")
    y = panel.values
    obs = np.isfinite(y)
    filled = np.where(obs, y, 0.0)
    tot = filled.sum(axis=0)
    cnt = obs.sum(axis=0)
    other_cnt = cnt[None, :] - obs
    with np.errstate(invalid="ignore", divide="ignore"):
        other_mean = (tot[None, :] - filled) / other_cnt
    use = obs & (other_cnt > 0)
    sq = np.where(use, (filled - np.where(use, other_mean, 0.0)) ** 2, 0.0)
    mse = sq.sum(axis=1) / use.sum(axis=1)
    df = pd.DataFrame({"season": panel.seasons, "mse": mse, "n_weeks": use.sum(axis=1)})
    return df.sort_values(["mse", "season"], ascending=[False, True], ignore_index=True)
