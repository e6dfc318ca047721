"""Posterior sampling for the discrepancy model.

The sweep itself is compiled (see ``_kernel``); this module owns
configuration, initialisation, chain management and convergence
diagnostics.

Block order per iteration: SIR triple per season (three proposal
variants), common discrepancy (single site, then a whole-path shift),
season discrepancies (single site), trades of a constant between the
common and every season discrepancy (single week, then weeks 1..T-1;
these leave pi unchanged), autoregression coefficients,
precisions of the two walks and of each season, ``sigma_alpha``,
``a_delta``, ``b_delta``. The precisions and ``b_delta`` have conjugate
Gamma full conditionals and are drawn exactly.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernel as K
from ._io import save_npz
from .data import SeasonPanel
from .model import DataModelConfig, ModelState, PriorConstants, expit, logit
from .priors import I0_BOUNDS, RHO_BOUNDS, TruncatedMvnPrior, sample_prior

MODES = ("diagnostic", "production", "ci")
BLOCK_NAMES = ("sir_plain", "sir_pi", "sir_ar", "mu_site", "mu_shift", "delta_site",
               "alpha", "alpha_residual", "sigma_alpha", "a_delta", "trade_site", "trade_path")
HYPER_NAMES = ("tau_muT", "tau_mu", "sigma_alpha", "a_delta", "b_delta")
RHAT_WARN = 1.1


class InitializationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Chain layout. Burn-in is the leading ``burn_in_fraction`` of each
    chain; thinning applies to the remainder."""

    n_chains: int = 1
    n_iter: int = 50_000
    burn_in_fraction: float = 0.5
    thin: int = 10
    seed: int = 0
    adapt_window: int = 50

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iter < 1 or self.thin < 1 or self.adapt_window < 1:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must be in [0, 1)")
        if self.n_kept < 1:
            raise ValueError("configuration keeps no draws")

    @classmethod
    def for_mode(cls, mode: str, seed: int = 0) -> "SamplerConfig":
        if mode == "diagnostic":
            return cls(n_chains=4, n_iter=100_000, thin=20, seed=seed)
        if mode == "production":
            return cls(n_chains=1, n_iter=50_000, thin=10, seed=seed)
        if mode == "ci":
            return cls(n_chains=1, n_iter=10_000, thin=2, seed=seed)
        raise ValueError(f"unknown sampler mode {mode!r}; expected one of {MODES}")

    @property
    def n_burn(self) -> int:
        return int(round(self.n_iter * self.burn_in_fraction))

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin


class RhatResult(NamedTuple):
    rhat: float
    degenerate: bool


@dataclass(eq=False)
class PosteriorDraws:
    """Thinned post-burn-in draws, stacked as (chain, draw, ...)."""

    seasons: tuple[int, ...]
    theta: np.ndarray          # (C, N, J, 3) i0, beta, rho
    logit_i: np.ndarray        # (C, N, J, T)
    mu: np.ndarray             # (C, N, T)
    delta: np.ndarray          # (C, N, J, T)
    logit_alpha: np.ndarray    # (C, N, J)
    tau_delta: np.ndarray      # (C, N, J)
    hyper: np.ndarray          # (C, N, 5) see HYPER_NAMES
    log_target: np.ndarray     # (C, N)
    acceptance: dict[str, float]
    config: SamplerConfig
    chain_seeds: tuple[tuple[int, int], ...]
    lam: float = 4500.0
    s0: float = 0.9
    rhat: dict[str, RhatResult] = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.theta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.theta.shape[1]

    @property
    def T(self) -> int:
        return self.mu.shape[-1]

    @property
    def alpha(self) -> np.ndarray:
        return expit(self.logit_alpha)

    @property
    def sigma2_delta(self) -> np.ndarray:
        return 1.0 / self.tau_delta

    @property
    def sigma2_muT(self) -> np.ndarray:
        return 1.0 / self.hyper[..., 0]

    @property
    def sigma2_mu(self) -> np.ndarray:
        return 1.0 / self.hyper[..., 1]

    def eta(self) -> np.ndarray:
        """logit(pi) for every draw, shape (C, N, J, T)."""
        eta = self.logit_i + self.mu[:, :, None, :] + self.delta
        eta[..., -1] = self.mu[:, :, None, -1]
        return eta

    def pi(self) -> np.ndarray:
        return expit(self.eta())

    def season_index(self, season: int) -> int:
        return self.seasons.index(season)

    def state(self, chain: int, k: int) -> ModelState:
        th = self.theta[chain, k]
        h = self.hyper[chain, k]
        return ModelState(th[:, 0], th[:, 1], th[:, 2], self.mu[chain, k], self.delta[chain, k],
                          expit(self.logit_alpha[chain, k]), 1.0 / self.tau_delta[chain, k],
                          1.0 / h[0], 1.0 / h[1], h[2], h[3], h[4], self.s0)

    def scalars(self) -> dict[str, np.ndarray]:
        """Every scalar latent as a (C, N) array, keyed by a readable name."""
        out = {}
        for j, s in enumerate(self.seasons):
            for q, name in enumerate(("i0", "beta", "rho")):
                out[f"{name}[{s}]"] = self.theta[:, :, j, q]
            out[f"alpha[{s}]"] = self.alpha[:, :, j]
            out[f"sigma2_delta[{s}]"] = self.sigma2_delta[:, :, j]
            for t in range(self.T - 1):
                out[f"delta[{s},{t + 1}]"] = self.delta[:, :, j, t]
        for t in range(self.T):
            out[f"mu[{t + 1}]"] = self.mu[:, :, t]
        out["sigma2_muT"] = self.sigma2_muT
        out["sigma2_mu"] = self.sigma2_mu
        out["sigma_alpha"] = self.hyper[:, :, 2]
        out["a_delta"] = self.hyper[:, :, 3]
        out["b_delta"] = self.hyper[:, :, 4]
        return out

    def iterations(self) -> np.ndarray:
        """1-based sampler iteration of each stored draw."""
        c = self.config
        return c.n_burn + c.thin * np.arange(1, self.n_draws + 1)


# -- set-up ------------------------------------------------------------------

def _constants(config: DataModelConfig, constants: PriorConstants) -> np.ndarray:
    C = np.zeros(K.N_CONST)
    C[K.C_LAM] = config.lam
    C[K.C_LGLAM] = math.lgamma(config.lam)
    C[K.C_S0] = constants.s0
    C[K.C_MUT_A], C[K.C_MUT_B] = constants.prec_mu_T
    C[K.C_MU_A], C[K.C_MU_B] = constants.prec_mu
    C[K.C_AD_A], C[K.C_AD_B] = constants.a_delta
    C[K.C_BD_A], C[K.C_BD_B] = constants.b_delta
    C[K.C_SA_A], C[K.C_SA_B] = constants.sigma_alpha
    C[K.C_AL_M] = float(logit(constants.alpha_center))
    C[K.C_AL_LO], C[K.C_AL_HI] = constants.logit_alpha_bounds
    C[K.C_I0_HI] = I0_BOUNDS[1]
    C[K.C_RHO_HI] = RHO_BOUNDS[1]
    return C


def _to_z(theta: np.ndarray) -> np.ndarray:
    return np.column_stack([logit(theta[:, 0] / I0_BOUNDS[1]), np.log(theta[:, 1]),
                            logit(theta[:, 2] / RHO_BOUNDS[1])])


def proposal_cholesky(prior: TruncatedMvnPrior, seed: int, n: int = 4000) -> np.ndarray:
    """Cholesky factor of the prior covariance on the sampler's transformed scale."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    z = _to_z(sample_prior(prior, rng, size=n))
    cov = np.cov(z, rowvar=False) + 1e-10 * np.eye(3)
    return np.linalg.cholesky(cov)


def _prior_mean_logit_i(prior, C, T):
    buf = np.empty((3, T))
    out = np.empty(T)
    i0, beta, rho = prior.mean
    if K.infectious_logit(i0, beta, rho, C, buf, out):
        return out
    return None


def _initial_state(panel, prior, C, rng, pmean, pprec, logy, log1my, obs):
    J, T = panel.values.shape
    buf = np.empty((3, T))
    ref = _prior_mean_logit_i(prior, C, T)
    mu = np.zeros(T)
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ybar = np.nanmean(panel.values, axis=0)
    for t in range(T):
        if np.isfinite(ybar[t]):
            mu[t] = logit(ybar[t]) - (ref[t] if ref is not None and t < T - 1 else 0.0)
    la = np.full(J, C[K.C_AL_M])
    tau = np.full(J, 50.0)
    hyp = np.array([1.0, 100.0, 1.0, 5.0, 0.1])
    for _ in range(100):
        theta = np.atleast_2d(sample_prior(prior, rng, size=J))
        lgi = np.empty((J, T))
        if not all(K.infectious_logit(*theta[j], C, buf, lgi[j]) for j in range(J)):
            continue
        delta = np.zeros((J, T))
        delta[:, -1] = -lgi[:, -1]
        lt = K.log_target(theta, lgi, mu, delta, la, tau, hyp, logy, log1my, obs, C,
                          pmean, pprec)
        if np.isfinite(lt):
            return theta, lgi, mu, delta, la, tau, hyp
    raise InitializationFailed("100 prior draws all gave a non-finite log posterior")


def _data_arrays(panel: SeasonPanel):
    obs = panel.observed.copy()
    y = np.where(obs, panel.values, 0.5)
    logy = np.where(obs, np.log(y), np.nan)
    log1my = np.where(obs, np.log1p(-y), np.nan)
    return logy, log1my, obs


# -- chains ------------------------------------------------------------------

@dataclass
class ChainResult:
    theta: np.ndarray
    logit_i: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    logit_alpha: np.ndarray
    tau_delta: np.ndarray
    hyper: np.ndarray
    log_target: np.ndarray
    accepted: np.ndarray
    seed: tuple[int, int]


def run_chain(panel: SeasonPanel, prior: TruncatedMvnPrior, config: SamplerConfig,
              chain_id: int = 0, *, model: DataModelConfig = DataModelConfig(),
              constants: PriorConstants = PriorConstants(),
              proposal_chol: np.ndarray | None = None) -> ChainResult:
    """Run one chain; deterministic given ``(config.seed, chain_id)``."""
    if len(panel.seasons) == 0:
        raise ValueError("panel has no seasons")
    J, T = panel.values.shape
    if T != model.T:
        raise ValueError(f"panel has {T} weeks but the model expects {model.T}")
    C = _constants(model, constants)
    pmean = np.ascontiguousarray(prior.mean)
    pprec = np.ascontiguousarray(prior.precision)
    pchol = proposal_chol if proposal_chol is not None else proposal_cholesky(prior, config.seed)
    logy, log1my, obs = _data_arrays(panel)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain_id]))
    theta, lgi, mu, delta, la, tau, hyp = _initial_state(panel, prior, C, rng, pmean, pprec,
                                                          logy, log1my, obs)
    N = config.n_kept
    ls_sir = np.full((3, J), math.log(0.5))
    ls_mu = np.full((2, T), math.log(0.05))
    ls_delta = np.full((J, T), math.log(0.1))
    ls_alpha = np.full((2, J), math.log(0.3))
    ls_hyp = np.array([math.log(0.02), math.log(0.3), math.log(0.3), math.log(0.05)])
    out = dict(theta=np.empty((N, J, 3)), logit_i=np.empty((N, J, T)), mu=np.empty((N, T)),
               delta=np.empty((N, J, T)), logit_alpha=np.empty((N, J)),
               tau_delta=np.empty((N, J)), hyper=np.empty((N, 5)), log_target=np.empty(N))
    acc = np.zeros((K.N_KINDS, 2))
    kept = K.run_sweeps(rng, config.n_iter, config.n_burn, config.thin, config.adapt_window,
                        logy, log1my, obs, C, pmean, pprec, pchol,
                        theta, lgi, mu, delta, la, tau, hyp,
                        ls_sir, ls_mu, ls_delta, ls_alpha, ls_hyp,
                        out["theta"], out["logit_i"], out["mu"], out["delta"],
                        out["logit_alpha"], out["tau_delta"], out["hyper"], out["log_target"],
                        acc)
    assert kept == N
    return ChainResult(accepted=acc, seed=(config.seed, chain_id), **out)


def sample_posterior(panel: SeasonPanel, prior: TruncatedMvnPrior, config: SamplerConfig, *,
                     model: DataModelConfig = DataModelConfig(),
                     constants: PriorConstants = PriorConstants(),
                     max_workers: int | None = None) -> PosteriorDraws:
    """Run ``config.n_chains`` chains and merge them.

    With two or more chains an R-hat is attached for every scalar latent; a
    warning is raised when any reaches 1.1.
    """
    pchol = proposal_cholesky(prior, config.seed)

    def job(c):
        return run_chain(panel, prior, config, c, model=model, constants=constants,
                         proposal_chol=pchol)

    if config.n_chains == 1:
        chains = [job(0)]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            chains = list(pool.map(job, range(config.n_chains)))
    acc = np.sum([c.accepted for c in chains], axis=0)
    rates = {name: (acc[k, 0] / acc[k, 1] if acc[k, 1] else float("nan"))
             for k, name in enumerate(BLOCK_NAMES)}
    stack = {f: np.stack([getattr(c, f) for c in chains])
             for f in ("theta", "logit_i", "mu", "delta", "logit_alpha", "tau_delta", "hyper",
                       "log_target")}
    draws = PosteriorDraws(seasons=tuple(panel.seasons), acceptance=rates, config=config,
                           chain_seeds=tuple(c.seed for c in chains), lam=model.lam,
                           s0=constants.s0, **stack)
    if config.n_chains >= 2:
        draws.rhat = {name: gelman_rubin(v) for name, v in draws.scalars().items()}
        bad = [n for n, r in draws.rhat.items() if r.rhat >= RHAT_WARN]
        if bad:
            warnings.warn(f"{len(bad)} parameters have R-hat >= {RHAT_WARN}, e.g. {bad[:5]}",
                          RuntimeWarning, stacklevel=2)
    return draws


# -- diagnostics -------------------------------------------------------------

def gelman_rubin(chains, extractor: Callable | None = None) -> RhatResult:
    """Potential scale reduction factor.

    Parameters
    ----------
    chains : sequence of 1-d arrays, or an (m, n) array
        At least two chains of equal length, n >= 10.
    extractor : callable, optional
        Applied to each chain to obtain the scalar series.

    Returns
    -------
    RhatResult
        ``degenerate`` is set, and ``rhat`` is 1.0, when the within- or
        between-chain variance is zero.
    """
    if extractor is not None:
        chains = [extractor(c) for c in chains]
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two chains of equal length")
    m, n = x.shape
    if n < 10:
        raise ValueError("chains must have at least 10 draws")
    means = x.mean(axis=1)
    B = n * means.var(ddof=1)
    W = x.var(axis=1, ddof=1).mean()
    if W <= 0.0 or B <= 0.0:
        return RhatResult(1.0, True)
    var_plus = (n - 1) / n * W + B / n
    return RhatResult(float(math.sqrt(var_plus / W)), False)


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    return ac / ac[0]


def effective_sample_size(chains) -> float:
    """Summed per-chain ESS using Geyer's initial monotone sequence."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for c in x:
        n = len(c)
        if np.var(c) == 0:
            total += n
            continue
        rho = _autocorr(c)
        pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
        # initial positive sequence, then enforce monotone decrease
        stop = np.flatnonzero(pairs <= 0)
        pairs = pairs[: stop[0]] if stop.size else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        total += n / max(tau, 1.0 / n)
    return float(total)


def convergence_report(draws: PosteriorDraws) -> dict[str, str]:
    rep = {"n_chains": str(draws.n_chains), "draws_per_chain": str(draws.n_draws),
           "n_iter": str(draws.config.n_iter), "burn_in": str(draws.config.n_burn),
           "thin": str(draws.config.thin), "seed": str(draws.config.seed)}
    for k, v in draws.acceptance.items():
        rep[f"accept.{k}"] = f"{v:.4f}"
    if draws.rhat:
        vals = {k: r.rhat for k, r in draws.rhat.items()}
        worst = max(vals, key=vals.get)
        rep["rhat.max"] = f"{vals[worst]:.5f}"
        rep["rhat.argmax"] = worst
        rep["rhat.n_over_1.1"] = str(sum(v >= RHAT_WARN for v in vals.values()))
        rep["rhat.n_degenerate"] = str(sum(r.degenerate for r in draws.rhat.values()))
        for k, r in draws.rhat.items():
            rep[f"rhat.{k}"] = f"{r.rhat:.5f}"
    else:
        rep["rhat.max"] = "NA"
    return rep


def write_report(report: dict[str, str], path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in report.items()))


def write_draws(draws: PosteriorDraws, path, names: Sequence[str] | None = None) -> None:
    """Long-format CSV: chain, iteration, variable, value."""
    sc = draws.scalars()
    keys = list(sc) if names is None else list(names)
    iters = draws.iterations()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("chain", "iteration", "variable", "value"))
        for c in range(draws.n_chains):
            for k, it in enumerate(iters):
                for name in keys:
                    w.writerow((c, int(it), name, repr(float(sc[name][c, k]))))


def save_draws_npz(draws: PosteriorDraws, path) -> None:
    save_npz(path, theta=draws.theta, logit_i=draws.logit_i, mu=draws.mu,
                        delta=draws.delta, logit_alpha=draws.logit_alpha,
                        tau_delta=draws.tau_delta, hyper=draws.hyper,
                        log_target=draws.log_target, seasons=np.array(draws.seasons))
