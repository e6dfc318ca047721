"""TOML run configuration.

Example::

    [data]
    panel = "ilinet_national.csv"   # final-vintage panel
    vintages = "ilinet_issues.csv"  # optional, rows carry an issue column
    baseline = 0.021

    [model]
    lambda = 4500
    T = 35

    [sampler]
    mode = "production"             # diagnostic | production | ci
    seed = 20151

    [backtest]
    seasons = [2015]
    weeks = [3, 30]
    vintage = "final"               # final | faithful

    [api]
    endpoint = "https://api.delphi.cmu.edu/epidata/fluview/"
    timeout = 30
"""
from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def read_toml(path) -> dict:
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)
