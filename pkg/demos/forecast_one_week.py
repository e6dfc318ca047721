"""Fit one Season.Week, bin the predictive trajectories and score them.

Run: python3 demos/forecast_one_week.py
"""
import numpy as np

from dbflu import forecast as fc
from dbflu.mcmc import SamplerConfig, convergence_report, sample_posterior
from dbflu.model import simulate_panel
from dbflu.priors import TruncatedMvnPrior
from dbflu.scoring import resolve_truth, score_submission_set

SEASON, WEEK = 2005, 10
# common discrepancy path: near zero mid-season, about logit(0.0103) at week 35
MU = -4.56 * 0.9 ** (34 - np.arange(35))


def main():
    prior = TruncatedMvnPrior([0.005, 0.8, 0.72], np.diag([0.0015**2, 0.08**2, 0.02**2]))
    panel, _ = simulate_panel(tuple(range(2001, 2006)), prior, np.random.default_rng(8), mu=MU)
    visible = panel.masked(SEASON, WEEK)

    draws = sample_posterior(visible, prior, SamplerConfig.for_mode("ci", seed=1))
    rep = convergence_report(draws)
    print("acceptance:", {k: v for k, v in rep.items() if k.startswith("accept.")})

    pset = fc.predictive_simulate(draws, visible, SEASON, WEEK, np.random.default_rng(2))
    lo, hi = pset.interval()
    y = panel.season_values(SEASON)
    for t in range(WEEK, WEEK + 6):
        print(f"week {t + 1}: truth {y[t]:.4f}  95% PI [{lo[t]:.4f}, {hi[t]:.4f}]")

    forecasts = fc.forecast_all(pset)
    for f in forecasts:
        k = int(np.argmax(f.probs))
        print(f"{f.target:>5}: modal bin {fc.bin_bounds(f.target, k)} p={f.probs[k]:.3f}")

    scores = score_submission_set(forecasts, resolve_truth(y, SEASON))
    print("log scores:", {k: round(v, 3) for k, v in scores.per_target.items()})


if __name__ == "__main__":
    main()
