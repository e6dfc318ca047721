"""Challenge log scores with neighbouring-bin credit.

A forecast scores ``ln(p[i-1] + p[i] + p[i+1])`` for truth bin ``i``;
neighbours are clipped at the ends of the ordinal bins. The onset "none"
bin is categorical and earns no neighbour credit, nor lends any.
Late, malformed or over-summed (> 1.1) submissions, and scores below
-10, all score -10.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import forecast as fc

FLOOR = -10.0
MAX_TOTAL = 1.1


class MissingTruth(KeyError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    model: str
    submission_week: int
    target: str
    log_score: float
    truth_index: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not FLOOR <= self.log_score <= 0.0:
            raise ValueError(f"score {self.log_score} outside [-10, 0]")


def probability_problems(probs) -> list[str]:
    p = np.asarray(probs, dtype=float)
    issues = []
    if p.ndim != 1 or p.size == 0:
        issues.append("empty or non-vector probabilities")
    elif not np.all(np.isfinite(p)):
        issues.append("non-finite probability")
    elif np.any(p < 0):
        issues.append("negative probability")
    elif p.sum() > MAX_TOTAL:
        issues.append("probabilities sum above 1.1")
    return issues


def log_score(probs, truth_index: int, *, late: bool = False,
              n_ordinal: int | None = None) -> float:
    """Log score of one binned forecast.

    Parameters
    ----------
    probs : 1-d array
        Bin probabilities.
    truth_index : int
        0-based bin of the observed target.
    late : bool
        Late submissions score -10.
    n_ordinal : int, optional
        Bins at or after this index are categorical and take no neighbour
        credit. Defaults to all bins ordinal.
    """
    p = np.asarray(probs, dtype=float)
    if late or probability_problems(p):
        return FLOOR
    n = p.size
    if not 0 <= truth_index < n:
        raise IndexError(f"truth index {truth_index} outside 0..{n - 1}")
    n_ord = n if n_ordinal is None else n_ordinal
    if truth_index >= n_ord:
        mass = p[truth_index]
    else:
        mass = p[max(truth_index - 1, 0): min(truth_index + 2, n_ord)].sum()
    if not mass > 0:
        return FLOOR
    return max(math.log(mass), FLOOR)


def _n_ordinal(f: fc.BinnedForecast) -> int | None:
    return f.T if f.target == "Onset" else None


def score_forecast(f: fc.BinnedForecast, truth_index: int, model: str = "dbflu",
                   late: bool = False) -> ScoreRecord:
    flags = list(probability_problems(f.probs))
    if late:
        flags.append("late")
    if len(f.probs) != fc.n_bins(f.target, f.T):
        flags.append("wrong bin count")
    n_ord = _n_ordinal(f)
    if n_ord is not None and (truth_index == n_ord or
                              (truth_index == n_ord - 1 and f.probs[n_ord] > 0)):
        flags.append("categorical onset bin")
    score = FLOOR if "wrong bin count" in flags else log_score(
        f.probs, truth_index, late=late, n_ordinal=n_ord)
    return ScoreRecord(model, f.submission_week, f.target, score, int(truth_index), tuple(flags))


# -- truths ------------------------------------------------------------------

@dataclass(frozen=True)
class SeasonTruth:
    """Truth bins for one season: season-level targets plus k-ahead by week."""

    season: int
    bins: dict[str, int]
    ahead: dict[tuple[str, int], int] = field(default_factory=dict)

    def index(self, target: str, week: int) -> int:
        if fc.ahead_of(target) is None:
            try:
                return self.bins[target]
            except KeyError:
                raise MissingTruth(f"no truth for {target}") from None
        try:
            return self.ahead[(target, week)]
        except KeyError:
            raise MissingTruth(f"no truth for {target} at week {week}") from None


def resolve_truth(values, season: int = 0, baseline: float = fc.BASELINE,
                  weeks: Iterable[int] = range(3, 31)) -> SeasonTruth:
    """Bin every target of a complete final-vintage season."""
    y = np.asarray(values, dtype=float)
    missing = [int(t) + 1 for t in np.flatnonzero(~np.isfinite(y))]
    if missing:
        raise ValueError(f"season {season} incomplete; missing weeks {missing}")
    bins = {t: int(fc.target_bins(y[None, :], t, baseline=baseline)[0])
            for t in ("PI", "PT", "Onset")}
    ahead = {}
    for w in weeks:
        for k in fc.AHEAD:
            if w + k <= len(y):
                ahead[(f"{k}wk", w)] = int(fc.intensity_bin(y[w + k - 1]))
    return SeasonTruth(int(season), bins, ahead)


# -- sets of submissions -----------------------------------------------------

@dataclass(frozen=True)
class SetScore:
    records: tuple[ScoreRecord, ...]
    per_target: dict[str, float]
    overall: float


def score_submission_set(submissions: Iterable[fc.BinnedForecast], truth: SeasonTruth,
                         model: str = "dbflu", late: Iterable[tuple[str, int]] = (),
                         expected: Sequence[tuple[str, int]] | None = None) -> SetScore:
    """Average log score per target, and across targets.

    ``late`` lists (target, week) pairs submitted late; they score -10,
    as does any ``expected`` pair that is late and absent. An expected
    pair that is absent but not marked late is an error.
    """
    late = set(late)
    records = []
    seen = set()
    for f in submissions:
        key = (f.target, f.submission_week)
        seen.add(key)
        records.append(score_forecast(f, truth.index(*key), model, late=key in late))
    for key in expected or ():
        if key in seen:
            continue
        if key not in late:
            raise ValueError(f"no submission for {key} and it is not marked late")
        records.append(ScoreRecord(model, key[1], key[0], FLOOR, truth.index(*key), ("late",)))
    if not records:
        raise ValueError("no submissions to score")
    per_target: dict[str, list[float]] = {}
    for r in records:
        per_target.setdefault(r.target, []).append(r.log_score)
    means = {t: float(np.mean(per_target[t])) for t in fc.TARGETS if t in per_target}
    return SetScore(tuple(records), means, float(np.mean(list(means.values()))))


SCORE_COLUMNS = ("model", "week", "target", "truth_bin", "log_score", "flags")


def write_scores(records: Iterable[ScoreRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow((r.model, r.submission_week, r.target, r.truth_index,
                        repr(r.log_score), ";".join(r.flags)))


def write_score_summary(summaries: Mapping[str, SetScore], path) -> None:
    """Per model: mean score for each target and overall."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("model", "target", "mean_log_score"))
        for model, s in summaries.items():
            for t, v in s.per_target.items():
                w.writerow((model, t, repr(v)))
            w.writerow((model, "overall", repr(s.overall)))
