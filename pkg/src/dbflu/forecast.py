"""Posterior predictive trajectories, challenge targets and binned forecasts.

Weeks are season weeks, 1-based in every public signature. Intensity bins
are half-open ``[lo, lo + 0.005)`` for ``lo`` in ``0, 0.005, ..., 0.125``
plus a catch-all ``[0.13, 1]``. Peak-timing bins are the 35 season weeks;
onset adds a final "none" bin.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import mmwr
from .data import SeasonPanel
from .mcmc import PosteriorDraws

BASELINE = 0.021
ONSET_RUN = 3
MIN_SAMPLES = 500
AHEAD = (1, 2, 3, 4)
TARGETS = ("PI", "PT", "Onset", "1wk", "2wk", "3wk", "4wk")
INTENSITY_WIDTH = 0.005
INTENSITY_EDGES = np.round(np.arange(27) * INTENSITY_WIDTH, 3)  # 0, ..., 0.13
N_INTENSITY = len(INTENSITY_EDGES)  # 26 regular bins + the catch-all

_TARGET_ALIASES = {
    "season peak percentage": "PI", "season peak intensity": "PI", "pi": "PI",
    "season peak week": "PT", "pt": "PT",
    "season onset": "Onset", "onset": "Onset",
    "1 wk ahead": "1wk", "2 wk ahead": "2wk", "3 wk ahead": "3wk", "4 wk ahead": "4wk",
    "1wk": "1wk", "2wk": "2wk", "3wk": "3wk", "4wk": "4wk",
}


def canonical_target(name: str) -> str:
    try:
        return _TARGET_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown target {name!r}") from None


def ahead_of(target: str) -> int | None:
    return int(target[0]) if target.endswith("wk") else None


def is_intensity(target: str) -> bool:
    return target == "PI" or target.endswith("wk")


def n_bins(target: str, T: int = mmwr.SEASON_WEEKS) -> int:
    if is_intensity(target):
        return N_INTENSITY
    if target == "PT":
        return T
    if target == "Onset":
        return T + 1
    raise ValueError(f"unknown target {target!r}")


def intensity_bin(value) -> np.ndarray | int:
    """Index of the intensity bin holding ``value`` (half-open bins)."""
    v = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(v)) or np.any((v < 0) | (v > 1)):
        raise ValueError("intensity values must lie in [0, 1]")
    idx = np.searchsorted(INTENSITY_EDGES, v, side="right") - 1
    return idx[()] if idx.ndim == 0 else idx


def bin_bounds(target: str, index: int, T: int = mmwr.SEASON_WEEKS) -> tuple[str, str]:
    """Printable (bin_start, bin_end) labels for one bin."""
    if is_intensity(target):
        lo = INTENSITY_EDGES[index]
        hi = 1.0 if index == N_INTENSITY - 1 else INTENSITY_EDGES[index + 1]
        return f"{lo:.3f}", f"{hi:.3f}"
    if target == "Onset" and index == T:
        return "none", "none"
    return str(index + 1), str(index + 2)


# -- predictive simulation ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictiveTrajectorySet:
    """Full-season wILI samples for one season fitted through ``through_week``.

    Observed weeks (at or before ``through_week`` with data) hold the data
    value in every sample.
    """

    season: int
    through_week: int
    samples: np.ndarray     # (S, T)
    observed: np.ndarray    # (T,) bool

    @property
    def T(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def interval(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        """Equal-tailed pointwise predictive interval."""
        lo, hi = np.quantile(self.samples, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return lo, hi

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def predictive_simulate(draws: PosteriorDraws, panel: SeasonPanel, season: int,
                        through_week: int, rng: np.random.Generator) -> PredictiveTrajectorySet:
    """Simulate the unobserved weeks of ``season`` from each posterior draw."""
    if not 1 <= through_week <= panel.T:
        raise ValueError(f"through_week must lie in 1..{panel.T}")
    j = draws.season_index(season)
    y = panel.season_values(season)
    observed = np.isfinite(y) & (np.arange(1, panel.T + 1) <= through_week)
    pi = draws.pi()[:, :, j, :].reshape(-1, panel.T)
    lam = draws.lam
    sim = rng.beta(lam * pi, lam * (1.0 - pi))
    sim = np.clip(sim, 1e-12, 1.0 - 1e-12)
    sim[:, observed] = y[observed]
    sim.setflags(write=False)
    observed.setflags(write=False)
    return PredictiveTrajectorySet(int(season), int(through_week), sim, observed)


# -- targets -----------------------------------------------------------------

class Targets(NamedTuple):
    peak_intensity: float
    peak_week: int
    onset_week: int | None
    ahead: dict[int, float]


def onset_week(trajectory, baseline: float = BASELINE, run: int = ONSET_RUN) -> int | None:
    """First week opening ``run`` consecutive weeks strictly above ``baseline``."""
    above = np.asarray(trajectory, dtype=float) > baseline
    streak = 0
    for t, flag in enumerate(above):
        streak = streak + 1 if flag else 0
        if streak == run:
            return t - run + 2
    return None


def compute_targets(trajectory, baseline: float = BASELINE,
                    through_week: int | None = None) -> Targets:
    """Peak intensity, peak week (earliest on ties), onset and k-week-ahead values.

    k-week-ahead values need ``through_week``; weeks past the season end
    are omitted.
    """
    y = np.asarray(trajectory, dtype=float)
    if np.any(~np.isfinite(y)):
        raise ValueError("trajectory must be complete")
    peak = int(np.argmax(y))
    ahead = {}
    if through_week is not None:
        ahead = {k: float(y[through_week + k - 1]) for k in AHEAD if through_week + k <= len(y)}
    return Targets(float(y[peak]), peak + 1, onset_week(y, baseline), ahead)


def target_bins(samples: np.ndarray, target: str, through_week: int | None = None,
                baseline: float = BASELINE) -> np.ndarray:
    """Bin index of ``target`` for each row of ``samples`` (S, T)."""
    y = np.atleast_2d(np.asarray(samples, dtype=float))
    T = y.shape[1]
    if target == "PI":
        return intensity_bin(y.max(axis=1))
    if target == "PT":
        return np.argmax(y, axis=1)
    if target == "Onset":
        above = (y > baseline).astype(np.int8)
        # windows of ONSET_RUN consecutive weeks above baseline
        win = above[:, : T - ONSET_RUN + 1].copy()
        for r in range(1, ONSET_RUN):
            win &= above[:, r: T - ONSET_RUN + 1 + r]
        hit = win.any(axis=1)
        return np.where(hit, np.argmax(win, axis=1), T)
    k = ahead_of(target)
    if k is None:
        raise ValueError(f"unknown target {target!r}")
    if through_week is None or through_week + k > T:
        raise ValueError(f"{target} undefined for through_week={through_week}")
    return intensity_bin(y[:, through_week + k - 1])


# -- binned forecasts --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BinnedForecast:
    target: str
    submission_week: int
    probs: np.ndarray
    scheme: str = "season-week"

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def T(self) -> int:
        if self.target == "PT":
            return len(self.probs)
        if self.target == "Onset":
            return len(self.probs) - 1
        return mmwr.SEASON_WEEKS

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (len(self.probs) == n_bins(self.target, self.T) and np.all(self.probs >= 0)
                and abs(self.probs.sum() - 1.0) <= tol)


def bin_forecast(pset: PredictiveTrajectorySet, target: str, baseline: float = BASELINE,
                 epsilon: float = 0.0) -> BinnedForecast:
    """Empirical bin frequencies of ``target`` over the predictive samples.

    ``epsilon`` > 0 floors every bin at that mass before renormalising;
    the default submits raw frequencies.
    """
    if pset.n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} predictive samples, have {pset.n}")
    idx = target_bins(pset.samples, target, pset.through_week, baseline)
    probs = np.bincount(idx, minlength=n_bins(target, pset.T)).astype(float) / pset.n
    if epsilon > 0:
        probs = np.maximum(probs, epsilon)
        probs /= probs.sum()
    return BinnedForecast(target, pset.through_week, probs)


def available_targets(through_week: int, T: int = mmwr.SEASON_WEEKS) -> list[str]:
    return [t for t in TARGETS if ahead_of(t) is None or through_week + ahead_of(t) <= T]


def forecast_all(pset: PredictiveTrajectorySet, baseline: float = BASELINE,
                 epsilon: float = 0.0) -> list[BinnedForecast]:
    return [bin_forecast(pset, t, baseline, epsilon)
            for t in available_targets(pset.through_week, pset.T)]


# -- submission files --------------------------------------------------------

SUBMISSION_COLUMNS = ("target", "bin_start", "bin_end", "probability")
EXTERNAL_COLUMNS = ("model", "week", "target", "bin_start", "bin_end", "probability")


def _week_label(target, index, T, season):
    lo, hi = bin_bounds(target, index, T)
    if season is None or lo == "none" or is_intensity(target):
        return lo, hi
    year, week = mmwr.season_week_to_mmwr(season, int(lo))
    nxt = mmwr.date_to_mmwr(mmwr.mmwr_start(year, week) + dt.timedelta(days=7))
    return str(week), str(nxt[1])


def write_submission(forecasts: Iterable[BinnedForecast], path, season: int | None = None) -> None:
    """One row per bin. Week bins carry MMWR labels when ``season`` is given."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUBMISSION_COLUMNS)
        for f in forecasts:
            for k, p in enumerate(f.probs):
                lo, hi = _week_label(f.target, k, f.T, season)
                w.writerow((f.target, lo, hi, repr(float(p))))


def _bin_index(target, start, T, season, percent):
    if is_intensity(target):
        lo = float(start) / (100.0 if percent else 1.0)
        return int(intensity_bin(min(lo + 1e-9, 1.0)))
    if start.strip().lower() == "none":
        if target != "Onset":
            raise ValueError("'none' bin is only valid for onset")
        return T
    w = int(float(start))
    if season is not None:
        w = mmwr.mmwr_to_season_week(season + (w < mmwr.SEASON_START_WEEK), w)[1]
    if not 1 <= w <= T:
        raise ValueError(f"week bin {start} outside the season")
    return w - 1


def _rows_to_forecasts(rows, week, T, season, percent):
    out = {}
    for target, start, p in rows:
        probs = out.setdefault(target, np.zeros(n_bins(target, T)))
        probs[_bin_index(target, start, T, season, percent)] += float(p)
    return [BinnedForecast(t, week, out[t]) for t in TARGETS if t in out]


def read_submission(path, submission_week: int, season: int | None = None,
                    T: int = mmwr.SEASON_WEEKS) -> list[BinnedForecast]:
    """Read a file written by :func:`write_submission`."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUBMISSION_COLUMNS:
            raise ValueError(f"{path}: expected columns {SUBMISSION_COLUMNS}")
        rows = [(canonical_target(r["target"]), r["bin_start"], r["probability"]) for r in reader]
    return _rows_to_forecasts(rows, submission_week, T, season, percent=False)


def read_external_submissions(path, season: int | None = None,
                              T: int = mmwr.SEASON_WEEKS) -> dict[tuple[str, int], list[BinnedForecast]]:
    """Read a multi-model challenge file keyed by ``(model, week)``.

    Target names may use the challenge's long forms. Intensity bins given
    in percent are detected (a bin start above 1) and converted. Week
    labels are MMWR weeks when ``season`` is given, else season weeks.
    The ``week`` column is the submission season week.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EXTERNAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        raw = list(reader)
    grouped: dict[tuple[str, int], list] = {}
    percent = False
    for r in raw:
        target = canonical_target(r["target"])
        if is_intensity(target) and float(r["bin_start"]) > 1.0:
            percent = True
        grouped.setdefault((r["model"], int(r["week"])), []).append(
            (target, r["bin_start"], r["probability"]))
    return {key: _rows_to_forecasts(rows, key[1], T, season, percent)
            for key, rows in grouped.items()}


def write_intervals(pset: PredictiveTrajectorySet, path, level: float = 0.95) -> None:
    lo, hi = pset.interval(level)
    mean = pset.mean()
    med = np.median(pset.samples, axis=0)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("week", "observed", "mean", "median", "lower", "upper"))
        for t in range(pset.T):
            w.writerow((t + 1, int(pset.observed[t]), repr(float(mean[t])), repr(float(med[t])),
                        repr(float(lo[t])), repr(float(hi[t]))))
