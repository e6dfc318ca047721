"""MMWR epidemiological calendar and the season-week mapping.

MMWR week 1 is the first Sunday-to-Saturday week holding at least four
days of the calendar year. Season week 1 is MMWR week 40 of the season's
start year; later season weeks count consecutive calendar weeks, so in a
53-week year MMWR week 53 takes season week 14 and everything after it
shifts by one. Seasons stop at season week 35.
"""
from __future__ import annotations

import datetime as dt

SEASON_START_WEEK = 40
SEASON_WEEKS = 35


def week1_start(year: int) -> dt.date:
    jan1 = dt.date(year, 1, 1)
    # Monday=0 ... Sunday=6 -> days since the preceding Sunday
    since_sunday = (jan1.weekday() + 1) % 7
    sunday = jan1 - dt.timedelta(days=since_sunday)
    if since_sunday <= 3:
        return sunday
    return sunday + dt.timedelta(days=7)


def weeks_in_year(year: int) -> int:
    return (week1_start(year + 1) - week1_start(year)).days // 7


def mmwr_start(year: int, week: int) -> dt.date:
    """Sunday that opens MMWR ``week`` of ``year``."""
    if not 1 <= week <= weeks_in_year(year):
        raise ValueError(f"MMWR week {week} does not exist in {year}")
    return week1_start(year) + dt.timedelta(days=7 * (week - 1))


def date_to_mmwr(day: dt.date) -> tuple[int, int]:
    year = day.year + 1
    while week1_start(year) > day:
        year -= 1
    return year, (day - week1_start(year)).days // 7 + 1


def mmwr_to_season_week(year: int, week: int) -> tuple[int, int]:
    """Map an MMWR week to ``(season, season_week)``.

    Raises ``ValueError`` for weeks outside season weeks 1..35.
    """
    start = mmwr_start(year, week)
    season = year if week >= SEASON_START_WEEK else year - 1
    offset = (start - mmwr_start(season, SEASON_START_WEEK)).days // 7 + 1
    if not 1 <= offset <= SEASON_WEEKS:
        raise ValueError(f"MMWR {year}w{week:02d} falls outside the flu season")
    return season, offset


def season_week_to_mmwr(season: int, season_week: int) -> tuple[int, int]:
    if not 1 <= season_week <= SEASON_WEEKS:
        raise ValueError(f"season week must lie in 1..{SEASON_WEEKS}, got {season_week}")
    start = mmwr_start(season, SEASON_START_WEEK) + dt.timedelta(days=7 * (season_week - 1))
    return date_to_mmwr(start)


def epiweek(year: int, week: int) -> int:
    return year * 100 + week


def split_epiweek(ew: int) -> tuple[int, int]:
    return divmod(int(ew), 100)


def season_week_epiweek(season: int, season_week: int) -> int:
    return epiweek(*season_week_to_mmwr(season, season_week))
