"""Weekly SIR curves, per-season least-squares fits and the empirical prior.

Run: python3 demos/sir_and_priors.py
"""
import numpy as np

from dbflu.model import simulate_panel
from dbflu.priors import TruncatedMvnPrior, fit_panel, fit_prior, sample_prior
from dbflu.sir import SirParams, classify_epidemic, solve_sir
# common discrepancy path: near zero mid-season, about logit(0.0103) at week 35
MU = -4.56 * 0.9 ** (34 - np.arange(35))


def main():
    p = SirParams(s0=0.9, i0=0.005, beta=0.8, rho=0.55 / 0.8)
    tr = solve_sir(p)
    print(f"{classify_epidemic(p).value}: peak {tr.i.max():.4f} at week {tr.peak_week}")

    # a small synthetic panel stands in for ILINet here
    truth = TruncatedMvnPrior([0.005, 0.8, 0.72], np.diag([0.0015**2, 0.08**2, 0.02**2]))
    panel, state = simulate_panel((2001, 2002, 2003, 2004), truth, np.random.default_rng(3), mu=MU)
    fits = fit_panel(panel)
    for s, f in fits.items():
        j = panel.index(s)
        print(f"{s}: fit i0={f.params.i0:.4f} beta={f.params.beta:.3f} rho={f.params.rho:.3f} "
              f"(generating {state.i0[j]:.4f} {state.beta[j]:.3f} {state.rho[j]:.3f})")

    prior = fit_prior(list(fits.values()), exclude=2004)
    print("prior mean without 2004:", np.round(prior.mean, 4))
    draws = sample_prior(prior, np.random.default_rng(0), size=5)
    print("five prior draws (i0, beta, rho):\n", np.round(draws, 4))


if __name__ == "__main__":
    main()
