"""Command-line entry point: ``dbflu <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import backtest as bt
from . import forecast as fc
from . import plotdata as pd_
from . import scoring
from .config import read_toml
from .data import (ENV_ENDPOINT, FetchError, PanelFormatError, VintageStore, fetch_surveillance,
                   parse_panel, parse_vintages, rows_to_store, write_panel, _read_rows)
from .mcmc import (MODES, SamplerConfig, convergence_report, sample_posterior, save_draws_npz,
                   write_draws, write_report)
from .model import DataModelConfig, PriorConstants, load_model_config
from .priors import fit_panel, fit_prior, read_fits, write_fits, write_prior

log = logging.getLogger("dbflu")


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Resolved configuration plus the manifest being built for one command."""

    def __init__(self, args):
        self.args = args
        self.cfg_path = Path(args.config) if args.config else None
        if self.cfg_path is not None and not self.cfg_path.is_file():
            raise UsageError(f"config file not found: {self.cfg_path}")
        self.cfg = read_toml(self.cfg_path) if self.cfg_path else {}
        self.base = self.cfg_path.parent if self.cfg_path else Path.cwd()
        self.inputs: dict[str, str] = {}
        sampler = self.cfg.get("sampler", {})
        self.mode = args.mode or sampler.get("mode", "production")
        self.seed = args.seed if args.seed is not None else int(sampler.get("seed", 0))
        self.vintage = args.vintage or self.cfg.get("backtest", {}).get("vintage", "final")
        out = args.out or self.cfg.get("output", {}).get("dir", "dbflu_out")
        self.out = Path(out)
        self.started = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
        if self.cfg_path is not None:
            self.model, self.constants = load_model_config(self.cfg_path)
            self.inputs[str(self.cfg_path)] = _sha256(self.cfg_path)
        else:
            self.model, self.constants = DataModelConfig(), PriorConstants()
        self.baseline = float(self.cfg.get("data", {}).get("baseline", fc.BASELINE))

    def path(self, value, what: str) -> Path:
        if value is None:
            raise UsageError(f"no {what} given (set it in the config file or on the command line)")
        p = Path(value)
        if not p.is_absolute() and not p.exists():
            p = self.base / p
        if not p.exists():
            raise UsageError(f"{what} not found: {value}")
        if p.is_file():
            self.inputs[str(p)] = _sha256(p)
        return p

    def sampler(self, seed: int | None = None) -> SamplerConfig:
        cfg = SamplerConfig.for_mode(self.mode, self.seed if seed is None else seed)
        extra = self.cfg.get("sampler", {})
        if "n_iter" in extra or "thin" in extra or "n_chains" in extra:
            cfg = SamplerConfig(int(extra.get("n_chains", cfg.n_chains)),
                                int(extra.get("n_iter", cfg.n_iter)),
                                float(extra.get("burn_in_fraction", cfg.burn_in_fraction)),
                                int(extra.get("thin", cfg.thin)), cfg.seed)
        return cfg

    def store(self) -> VintageStore:
        data = self.cfg.get("data", {})
        p = self.path(self.args.panel or data.get("panel"), "panel file")
        rows = _read_rows(p)
        if len({r[3] for r in rows}) > 1:
            return parse_vintages(p)
        return VintageStore.from_panel(parse_panel(p))

    def output_dir(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out

    def manifest(self, command: str, **extra) -> None:
        doc = {"command": command, "argv": sys.argv[1:],
               "config_hash": self.inputs.get(str(self.cfg_path)) if self.cfg_path else None,
               "seed": self.seed, "mode": self.mode, "vintage": self.vintage,
               "inputs": dict(sorted(self.inputs.items())), "version": __version__,
               "started": self.started,
               "finished": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}
        doc.update(extra)
        (self.output_dir() / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _fits_for(run: Run, store: VintageStore):
    fits_file = run.args.fits or run.cfg.get("data", {}).get("fits")
    if fits_file:
        return read_fits(run.path(fits_file, "fits table"), run.constants.s0)
    return list(fit_panel(store.final()).values())


# -- commands ----------------------------------------------------------------

def cmd_fit_priors(run: Run) -> None:
    panel = run.store().final()
    fits = fit_panel(panel)
    out = run.output_dir()
    write_fits(fits.values(), out / "fits.csv")
    write_prior(fit_prior(list(fits.values())), out / "prior_all.json")
    for s in panel.seasons:
        write_prior(fit_prior(list(fits.values()), exclude=s), out / f"prior_excl_{s}.json")
    run.manifest("fit-priors", n_fits=len(fits))


def _check_week(week):
    if week is None:
        raise UsageError("--week is required")
    if not bt.WEEK_RANGE[0] <= week <= bt.WEEK_RANGE[1]:
        raise UsageError(f"--week must lie in {bt.WEEK_RANGE[0]}..{bt.WEEK_RANGE[1]}, got {week}")


def cmd_forecast(run: Run) -> None:
    args = run.args
    if args.season is None:
        raise UsageError("--season is required")
    _check_week(args.week)
    store = run.store()
    plan = bt.BacktestPlan(seasons=(args.season,), weeks=(args.week,), vintage=run.vintage,
                           base_seed=run.seed, baseline=run.baseline, model=run.model,
                           constants=run.constants)
    panel = bt.cell_panel(plan, store, args.season, args.week)
    fits = [f for f in _fits_for(run, store) if f.season != args.season]
    prior = fit_prior(fits, exclude=args.season)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        draws = sample_posterior(panel, prior, run.sampler(), model=run.model,
                                 constants=run.constants)
    for w in caught:
        log.warning("%s", w.message)
    rng = np.random.default_rng(np.random.SeedSequence([run.seed, args.season, args.week]))
    pset = fc.predictive_simulate(draws, panel, args.season, args.week, rng)
    out = run.output_dir()
    forecasts = fc.forecast_all(pset, run.baseline, float(run.cfg.get("forecast", {}).get(
        "epsilon", 0.0)))
    fc.write_submission(forecasts, out / "submission.csv")
    fc.write_intervals(pset, out / "intervals.csv")
    write_report(convergence_report(draws), out / "convergence.txt")
    names = [k for k in draws.scalars() if not k.startswith("delta[")]
    write_draws(draws, out / "draws.csv", names)
    save_draws_npz(draws, out / "draws.npz")
    run.manifest("forecast", season=args.season, week=args.week,
                 targets=[f.target for f in forecasts])


def _plan_from_config(run: Run, store: VintageStore) -> bt.BacktestPlan:
    b = run.cfg.get("backtest", {})
    seasons = b.get("seasons") or list(store.final().seasons)
    if run.args.season is not None:
        seasons = [run.args.season]
    lo, hi = b.get("weeks", list(bt.WEEK_RANGE))
    weeks = range(int(lo), int(hi) + 1)
    if run.args.week is not None:
        _check_week(run.args.week)
        weeks = [run.args.week]
    return bt.BacktestPlan(seasons=tuple(seasons), weeks=tuple(weeks), sampler=run.sampler(),
                           vintage=run.vintage, base_seed=run.seed, baseline=run.baseline,
                           archive_draws=bool(b.get("archive_draws", False)), model=run.model,
                           constants=run.constants)


def cmd_backtest(run: Run) -> None:
    store = run.store()
    try:
        plan = _plan_from_config(run, store)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    workers = int(run.cfg.get("backtest", {}).get("workers", 1))
    res = bt.run_backtest(plan, store, run.output_dir(), workers=workers)
    run.manifest("backtest", completed=len(res.completed), skipped=len(res.skipped),
                 failed=len(res.failures))
    if res.failures:
        raise RuntimeError(f"{len(res.failures)} cells failed; see failures.csv")


def _truth_panel(run: Run):
    return run.store().final()


def cmd_score(run: Run) -> None:
    args = run.args
    chosen = [x for x in (args.backtest, args.submission, args.external) if x]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --backtest, --submission, --external")
    truth_panel = _truth_panel(run)
    summaries, records = {}, []

    def truth_for(season):
        try:
            values = truth_panel.season_values(season)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
        return scoring.resolve_truth(values, season, run.baseline)

    if args.submission:
        if args.season is None or args.week is None:
            raise UsageError("--submission needs --season and --week")
        subs = fc.read_submission(run.path(args.submission, "submission file"), args.week)
        s = scoring.score_submission_set(subs, truth_for(args.season), model=args.model)
        summaries[args.model] = s
        records += s.records
    elif args.external:
        if args.season is None:
            raise UsageError("--external needs --season")
        by_model: dict[str, list] = {}
        ext = fc.read_external_submissions(run.path(args.external, "submission file"),
                                           season=args.season if args.mmwr_labels else None)
        for (model, _), subs in ext.items():
            by_model.setdefault(model, []).extend(subs)
        truth = truth_for(args.season)
        for model, subs in sorted(by_model.items()):
            summaries[model] = scoring.score_submission_set(subs, truth, model=model)
            records += summaries[model].records
    else:
        cells = run.path(args.backtest, "backtest directory") / "cells"
        per_season: dict[int, list] = {}
        for d in sorted(cells.iterdir()):
            if d.name.startswith(".") or not (d / "submission.csv").exists():
                continue
            season, week = (int(x) for x in d.name.split("."))
            per_season.setdefault(season, []).extend(fc.read_submission(d / "submission.csv", week))
        for season, subs in sorted(per_season.items()):
            s = scoring.score_submission_set(subs, truth_for(season), model=args.model)
            summaries[f"{args.model}:{season}"] = s
            records += s.records
    out = run.output_dir()
    scoring.write_scores(records, out / "scores.csv")
    scoring.write_score_summary(summaries, out / "score_summary.csv")
    run.manifest("score", n_scores=len(records))


def cmd_coverage(run: Run) -> None:
    if not run.args.backtest:
        raise UsageError("--backtest is required")
    src = run.path(run.args.backtest, "backtest directory")
    level = float(run.cfg.get("backtest", {}).get("level", 0.95))
    rep = bt.coverage_report(bt.load_predictive(src), _truth_panel(run), level)
    rep.write(run.output_dir())
    run.manifest("coverage", n=rep.n, coverage=rep.overall)


def cmd_plotdata(run: Run) -> None:
    args = run.args
    store = run.store()
    panel = store.final()
    out = run.output_dir()
    written = []
    written.append(pd_.write_figure("fig1_wili", pd_.fig1_wili(panel), out))
    written.append(pd_.write_figure("fig2_mse", pd_.fig2_mse(panel), out))
    written.append(pd_.write_figure("fig4_sir_fits", pd_.fig4_sir_fits(
        panel, _fits_for(run, store)), out))
    if args.backtest:
        src = run.path(args.backtest, "backtest directory")
        sets = bt.load_predictive(src)
        if args.season is not None and args.week is not None:
            sel = [p for p in sets if (p.season, p.through_week) == (args.season, args.week)]
            if not sel:
                raise UsageError(f"no backtest cell {args.season}.{args.week}")
            written.append(pd_.write_figure("fig6_forecast", pd_.fig6_forecast(
                sel[0], panel.season_values(args.season)), out))
        rep = bt.coverage_report(sets, panel)
        written.append(pd_.write_figure("fig9_coverage", pd_.fig9_coverage(rep), out))
    if args.scores:
        import pandas as pd

        tab = pd.read_csv(run.path(args.scores, "score summary"))
        summ: dict[str, dict[str, float]] = {}
        for r in tab.itertuples():
            summ.setdefault(r.model, {})[r.target] = r.mean_log_score
        written.append(pd_.write_figure("fig11_scores", pd_.fig11_scores(summ), out))
    run.manifest("plotdata", files=sorted(p.name for pair in written for p in pair))


def cmd_fetch(run: Run) -> None:
    args = run.args
    if not args.epiweeks:
        raise UsageError("--epiweeks START-END is required")
    try:
        start, end = (int(x) for x in args.epiweeks.split("-"))
    except ValueError:
        raise UsageError(f"bad --epiweeks {args.epiweeks!r}") from None
    api = run.cfg.get("api", {})
    issues = [None] if not args.issues else [int(x) for x in args.issues.split(",")]
    rows = []
    for issue in issues:
        rows += fetch_surveillance(args.region, (start, end), issue,
                                   cache_dir=api.get("cache_dir", ".dbflu_cache"),
                                   endpoint=api.get("endpoint"), timeout=api.get("timeout"),
                                   offline=args.offline)
    store = rows_to_store(rows)
    out = run.output_dir()
    if len(store) == 1:
        write_panel(store.final(), out / "panel.csv")
    else:
        for issue in store.issues:
            write_panel(store.as_of(issue), out / f"panel_issue_{issue}.csv")
    run.manifest("fetch", region=args.region, epiweeks=args.epiweeks, issues=store.issues)


COMMANDS = {"fit-priors": cmd_fit_priors, "forecast": cmd_forecast, "backtest": cmd_backtest,
            "score": cmd_score, "coverage": cmd_coverage, "plotdata": cmd_plotdata,
            "fetch": cmd_fetch}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--panel", help="wILI panel file (overrides [data] panel)")
    common.add_argument("--season", type=int)
    common.add_argument("--week", type=int, help="season week observed through (3..30)")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--vintage", choices=bt.VINTAGES)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="dbflu", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dbflu {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-priors", parents=[common], help="fit per-season SIR curves and priors")
    f = sub.add_parser("forecast", parents=[common], help="fit one Season.Week and forecast")
    f.add_argument("--fits", help="fits table from fit-priors")
    sub.add_parser("backtest", parents=[common], help="leave-one-season-out backtest")
    s = sub.add_parser("score", parents=[common], help="log-score submissions")
    s.add_argument("--backtest", help="backtest output directory")
    s.add_argument("--submission", help="single submission file")
    s.add_argument("--external", help="multi-model challenge submission file")
    s.add_argument("--mmwr-labels", action="store_true",
                   help="week bins in the external file are MMWR weeks")
    s.add_argument("--model", default="dbflu")
    c = sub.add_parser("coverage", parents=[common], help="coverage tables of a backtest")
    c.add_argument("--backtest", help="backtest output directory")
    g = sub.add_parser("plotdata", parents=[common], help="figure tables and charts")
    g.add_argument("--fits")
    g.add_argument("--backtest")
    g.add_argument("--scores", help="score_summary.csv from the score command")
    h = sub.add_parser("fetch", parents=[common],
                       help=f"download ILINet rows (endpoint override: ${ENV_ENDPOINT})")
    h.add_argument("--region", default="nat")
    h.add_argument("--epiweeks", help="START-END, e.g. 199840-201620")
    h.add_argument("--issues", help="comma-separated issue epiweeks")
    h.add_argument("--offline", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for name in ("fits", "backtest", "submission", "external", "scores", "model",
                 "mmwr_labels", "region", "epiweeks", "issues", "offline"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        run = Run(args)
        COMMANDS[args.command](run)
    except (UsageError, PanelFormatError) as exc:
        print(f"dbflu: error: {exc}", file=sys.stderr)
        return 2
    except FetchError as exc:
        kind = "retryable" if exc.retryable else "permanent"
        print(f"dbflu: fetch failed ({kind}): {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"dbflu: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
