"""wILI panels, revision snapshots and the surveillance API client."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import mmwr

logger = logging.getLogger(__name__)

T_SEASON = mmwr.SEASON_WEEKS
PANDEMIC_SEASONS = (2008, 2009)
BOUNDARY_EPS = 1e-6

DEFAULT_ENDPOINT = "https://api.delphi.cmu.edu/epidata/fluview/"
ENV_ENDPOINT = "DBFLU_API_ENDPOINT"
ENV_TIMEOUT = "DBFLU_API_TIMEOUT"


class PanelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SeasonPanel:
    """Observed wILI proportions, one row per season, one column per week.

    Missing weeks are NaN. ``vintage`` names the issue the values reflect
    (``None`` for final data).
    """

    seasons: tuple[int, ...]
    values: np.ndarray
    vintage: int | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != len(self.seasons):
            raise ValueError("values must have shape (n_seasons, T)")
        if len(set(self.seasons)) != len(self.seasons):
            raise ValueError("duplicate season ids")
        finite = vals[np.isfinite(vals)]
        if finite.size and (finite.min() <= 0.0 or finite.max() >= 1.0):
            raise ValueError("wILI proportions must lie strictly inside (0, 1)")
        vals.setflags(write=False)
        object.__setattr__(self, "seasons", tuple(int(s) for s in self.seasons))
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, SeasonPanel):
            return NotImplemented
        return (self.seasons == other.seasons and self.vintage == other.vintage
                and np.array_equal(self.values, other.values, equal_nan=True))

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.values)

    def index(self, season: int) -> int:
        try:
            return self.seasons.index(int(season))
        except ValueError:
            raise KeyError(f"season {season} not in panel") from None

    def season_values(self, season: int) -> np.ndarray:
        return self.values[self.index(season)]

    def masked(self, season: int, through_week: int) -> "SeasonPanel":
        """Copy with ``season`` hidden after season-week ``through_week``."""
        vals = self.values.copy()
        vals[self.index(season), through_week:] = np.nan
        return SeasonPanel(self.seasons, vals, self.vintage)

    def subset(self, seasons: Iterable[int]) -> "SeasonPanel":
        seasons = tuple(seasons)
        rows = [self.index(s) for s in seasons]
        return SeasonPanel(seasons, self.values[rows], self.vintage)

    def without(self, season: int) -> "SeasonPanel":
        return self.subset(s for s in self.seasons if s != season)

    def with_values(self, season: int, values) -> "SeasonPanel":
        vals = self.values.copy()
        vals[self.index(season)] = values
        return SeasonPanel(self.seasons, vals, self.vintage)


@dataclass
class VintageStore:
    """Panel snapshots keyed by issue epiweek (YYYYWW)."""

    snapshots: dict[int, SeasonPanel] = field(default_factory=dict)

    def __len__(self):
        return len(self.snapshots)

    @property
    def issues(self) -> list[int]:
        return sorted(self.snapshots)

    def add(self, issue: int, panel: SeasonPanel):
        if issue in self.snapshots:
            raise ValueError(f"snapshot for issue {issue} already loaded")
        self.snapshots[int(issue)] = panel

    def as_of(self, issue: int) -> SeasonPanel:
        try:
            return self.snapshots[int(issue)]
        except KeyError:
            raise KeyError(f"no snapshot for issue {issue}") from None

    def final(self) -> SeasonPanel:
        return self.snapshots[max(self.snapshots)]

    @classmethod
    def from_panel(cls, panel: SeasonPanel) -> "VintageStore":
        return cls({panel.vintage if panel.vintage is not None else 0: panel})

    @classmethod
    def from_rows(cls, rows, seasons=None, exclude=PANDEMIC_SEASONS) -> "VintageStore":
        """Build one snapshot per issue from ``(season, week, wili, issue)`` rows.

        Each snapshot holds, per cell, the latest revision issued on or
        before that issue.
        """
        rows = sorted(rows, key=lambda r: r[3])
        if seasons is None:
            seasons = sorted({r[0] for r in rows} - set(exclude))
        pos = {s: k for k, s in enumerate(seasons)}
        current = np.full((len(seasons), T_SEASON), np.nan)
        store = cls()
        k = 0
        while k < len(rows):
            issue = rows[k][3]
            while k < len(rows) and rows[k][3] == issue:
                season, week, value, _ = rows[k]
                if season in pos:
                    current[pos[season], week - 1] = value
                k += 1
            store.add(issue, SeasonPanel(tuple(seasons), current.copy(), issue))
        return store


def _clamp_boundary(value: float) -> float:
    return min(max(value, BOUNDARY_EPS), 1.0 - BOUNDARY_EPS)


_ISSUE_LABEL = re.compile(r"^(\d{4})-wk(\d{1,2})$")


def _parse_issue(text: str) -> int:
    text = text.strip()
    m = _ISSUE_LABEL.match(text)
    if m:
        return mmwr.season_week_epiweek(int(m.group(1)), int(m.group(2)))
    try:
        return int(text)
    except ValueError:
        raise PanelFormatError(f"unrecognised issue label {text!r}") from None


def _read_rows(path) -> list[tuple[int, int, float, int | None]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if "wili_pct" in cols:
            value_col, percent = "wili_pct", True
        elif "wili" in cols:
            value_col, percent = "wili", None
        else:
            raise PanelFormatError(f"{path}: need a 'wili' or 'wili_pct' column")
        if {"season", "week"} <= cols:
            seasonal = True
        elif {"year", "mmwr_week"} <= cols or "epiweek" in cols:
            seasonal = False
        else:
            raise PanelFormatError(f"{path}: need season/week, year/mmwr_week or epiweek columns")
        raw = []
        for lineno, rec in enumerate(reader, start=2):
            text = (rec[value_col] or "").strip()
            if text in ("", "NA", "nan"):
                continue
            try:
                value = float(text)
                if seasonal:
                    season, week = int(rec["season"]), int(rec["week"])
                    if not 1 <= week <= T_SEASON:
                        raise PanelFormatError(f"{path}:{lineno}: week {week} outside 1..{T_SEASON}")
                else:
                    if "epiweek" in cols:
                        year, mweek = mmwr.split_epiweek(int(rec["epiweek"]))
                    else:
                        year, mweek = int(rec["year"]), int(rec["mmwr_week"])
                    season, week = mmwr.mmwr_to_season_week(year, mweek)
            except PanelFormatError:
                raise
            except ValueError as exc:
                raise PanelFormatError(f"{path}:{lineno}: {exc}") from None
            issue = _parse_issue(rec["issue"]) if rec.get("issue") else None
            raw.append((season, week, value, issue))
    if not raw:
        raise PanelFormatError(f"{path}: no wILI rows")
    if percent is None:
        percent = max(r[2] for r in raw) > 1.0
    rows = []
    seen = set()
    for season, week, value, issue in raw:
        if percent:
            value /= 100.0
        if not 0.0 <= value <= 1.0 or not np.isfinite(value):
            raise PanelFormatError(f"{path}: wILI {value} out of range at {season} week {week}")
        key = (season, week, issue)
        if key in seen:
            raise PanelFormatError(f"{path}: duplicate row for season {season} week {week} issue {issue}")
        seen.add(key)
        rows.append((season, week, _clamp_boundary(value), issue))
    return rows


def parse_vintages(path, exclude=PANDEMIC_SEASONS) -> VintageStore:
    """Load a file whose rows carry an ``issue`` column into a store."""
    rows = _read_rows(path)
    if any(r[3] is None for r in rows):
        raise PanelFormatError(f"{path}: every row needs an issue to build vintages")
    return VintageStore.from_rows(rows, exclude=exclude)


def parse_panel(path, exclude=PANDEMIC_SEASONS, issue: int | None = None) -> SeasonPanel:
    """Read a comma-delimited wILI file into a :class:`SeasonPanel`.

    Columns: ``season,week`` (season-week) or ``year,mmwr_week`` /
    ``epiweek``; ``wili`` (percent auto-detected when the maximum exceeds 1)
    or ``wili_pct``; optional ``issue``. Files with several issues need
    ``issue`` to pick a snapshot.
    """
    rows = _read_rows(path)
    issues = {r[3] for r in rows}
    if len(issues) > 1:
        store = VintageStore.from_rows(rows, exclude=exclude)
        if issue is None:
            raise PanelFormatError(f"{path}: {len(issues)} issues present; pass issue=")
        return store.as_of(issue)
    vintage = next(iter(issues))
    seasons = sorted({r[0] for r in rows} - set(exclude))
    pos = {s: k for k, s in enumerate(seasons)}
    values = np.full((len(seasons), T_SEASON), np.nan)
    for season, week, value, _ in rows:
        if season in pos:
            values[pos[season], week - 1] = value
    return SeasonPanel(tuple(seasons), values, vintage)


def write_panel(panel: SeasonPanel, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["season", "week", "wili"]
        if panel.vintage is not None:
            header.append("issue")
        writer.writerow(header)
        for season, row in zip(panel.seasons, panel.values):
            for week, value in enumerate(row, start=1):
                if np.isfinite(value):
                    rec = [season, week, repr(float(value))]
                    if panel.vintage is not None:
                        rec.append(panel.vintage)
                    writer.writerow(rec)


# ---------------------------------------------------------------------------
# surveillance API client


class FetchError(RuntimeError):
    def __init__(self, message, retryable: bool):
        super().__init__(message)
        self.retryable = retryable


def _cache_path(cache_dir, region, epiweeks, issue) -> Path:
    start, end = epiweeks
    tag = f"{region}_{start}-{end}_{issue if issue is not None else 'latest'}"
    return Path(cache_dir) / f"{tag}.json"


def fetch_surveillance(region: str, epiweeks: tuple[int, int], issue: int | None = None,
                       cache_dir=".dbflu_cache", endpoint: str | None = None,
                       timeout: float | None = None, offline: bool = False) -> list[dict]:
    """Fetch ILINet rows for ``region`` over an epiweek range.

    Responses are cached under ``cache_dir`` keyed by (region, range,
    issue); cached requests never touch the network. With ``issue`` set,
    any row reporting a different issue is an error.
    """
    import requests

    path = _cache_path(cache_dir, region, epiweeks, issue)
    if path.exists():
        payload = path.read_bytes()
    elif offline:
        raise FetchError(f"{path.name} not cached and offline mode is on", retryable=False)
    else:
        endpoint = endpoint or os.environ.get(ENV_ENDPOINT, DEFAULT_ENDPOINT)
        timeout = timeout or float(os.environ.get(ENV_TIMEOUT, "30"))
        params = {"regions": region, "epiweeks": f"{epiweeks[0]}-{epiweeks[1]}"}
        if issue is not None:
            params["issues"] = str(issue)
        try:
            resp = requests.get(endpoint, params=params, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise FetchError(f"network failure: {exc}", retryable=True) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise FetchError(f"HTTP {resp.status_code} from {endpoint}", retryable=True)
        if resp.status_code != 200:
            raise FetchError(f"HTTP {resp.status_code} from {endpoint}", retryable=False)
        payload = resp.content
        rows = _decode(payload, issue)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(payload)
        tmp.replace(path)
        logger.info("cached %s (%s)", path.name, hashlib.sha256(payload).hexdigest()[:12])
        return rows
    return _decode(payload, issue)


def _decode(payload: bytes, issue) -> list[dict]:
    try:
        doc = json.loads(payload)
    except ValueError as exc:
        raise FetchError(f"unparseable response: {exc}", retryable=False) from exc
    if doc.get("result") != 1:
        raise FetchError(f"API returned result={doc.get('result')}: {doc.get('message')}",
                         retryable=False)
    rows = doc.get("epidata") or []
    if issue is not None:
        wrong = {r.get("issue") for r in rows} - {issue}
        if wrong:
            raise FetchError(f"requested issue {issue}, got {sorted(wrong)}", retryable=False)
    return rows


def rows_to_store(rows: Iterable[Mapping], exclude=PANDEMIC_SEASONS) -> VintageStore:
    """Convert API rows (``epiweek``, ``wili`` in percent, ``issue``) to a store."""
    out = []
    for r in rows:
        try:
            season, week = mmwr.mmwr_to_season_week(*mmwr.split_epiweek(r["epiweek"]))
        except ValueError:
            continue
        out.append((season, week, _clamp_boundary(float(r["wili"]) / 100.0), int(r["issue"])))
    return VintageStore.from_rows(out, exclude=exclude)
