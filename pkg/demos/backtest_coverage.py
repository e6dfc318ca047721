"""Leave-one-season-out backtest over a few fit weeks and its coverage tables.

Run: python3 demos/backtest_coverage.py [out_dir]
Rerunning with the same directory skips finished cells.
"""
import sys
import tempfile

import numpy as np

from dbflu.backtest import (BacktestPlan, coverage_report, load_predictive, mse_typicality,
                            run_backtest)
from dbflu.data import VintageStore
from dbflu.mcmc import SamplerConfig
from dbflu.model import simulate_panel
from dbflu.priors import TruncatedMvnPrior
# common discrepancy path: near zero mid-season, about logit(0.0103) at week 35
MU = -4.56 * 0.9 ** (34 - np.arange(35))


def main(out):
    prior = TruncatedMvnPrior([0.005, 0.8, 0.72], np.diag([0.0015**2, 0.08**2, 0.02**2]))
    panel, _ = simulate_panel(tuple(range(2001, 2005)), prior, np.random.default_rng(12), mu=MU)
    print(mse_typicality(panel).to_string(index=False))

    plan = BacktestPlan(seasons=(2003, 2004), weeks=(5, 10, 15, 20), prior=prior,
                        sampler=SamplerConfig.for_mode("ci"), base_seed=1)
    res = run_backtest(plan, VintageStore.from_panel(panel), out)
    print(f"{len(res.completed)} cells fitted, {len(res.skipped)} already on disk")

    rep = coverage_report(load_predictive(out), panel)
    print(f"overall coverage {rep.overall:.3f} over {rep.n} forecasts")
    print(rep.by("ahead").head(8).to_string(index=False))
    rep.write(out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="dbflu-bt-"))
