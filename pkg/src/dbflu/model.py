"""Joint density of the dynamic Bayesian discrepancy model.

The latent wILI proportion for season ``j`` and week ``t`` is

    logit(pi[j, t]) = logit(I[j, t]) + mu[t] + delta[j, t]

with ``I`` the weekly SIR infectious curve, ``mu`` a common reverse random
walk and ``delta`` a season-specific autoregressive reverse random walk
pinned at ``delta[j, T] = -logit(I[j, T])``. Observations are
``Beta(lam * pi, lam * (1 - pi))``.

Densities are over precisions (``1 / sigma^2``), ``logit(alpha)``,
``sigma_alpha``, ``a_delta`` and ``b_delta``; that is the scale on which
the hyperpriors are stated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special, stats

from .data import SeasonPanel
from .priors import TruncatedMvnPrior
from .sir import S0_DEFAULT, T_DEFAULT, SirParams, _sir_path


@dataclass(frozen=True)
class DataModelConfig:
    lam: float = 4500.0
    T: int = T_DEFAULT

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.T < 2:
            raise ValueError("T must be at least 2")


@dataclass(frozen=True)
class PriorConstants:
    """Hyperprior constants. Gamma pairs are (shape, rate)."""

    prec_mu_T: tuple[float, float] = (2.0, 2.0)
    prec_mu: tuple[float, float] = (2.0, 0.02)
    a_delta: tuple[float, float] = (5.0, 1.0)
    b_delta: tuple[float, float] = (1.0, 10.0)
    sigma_alpha: tuple[float, float] = (2.0, 2.0)
    alpha_center: float = 0.9
    alpha_bounds: tuple[float, float] = (0.02, 0.98)
    s0: float = S0_DEFAULT

    @property
    def logit_alpha_bounds(self) -> tuple[float, float]:
        lo, hi = self.alpha_bounds
        return float(logit(lo)), float(logit(hi))


def logit(p):
    p = np.asarray(p, dtype=float)
    return (np.log(p) - np.log1p(-p))[()]


def expit(x):
    return special.expit(x)


def infectious_curves(i0, beta, rho, T: int, s0: float = S0_DEFAULT) -> np.ndarray:
    """Weekly infectious curves, one row per season; NaN rows on blow-up."""
    i0, beta, rho = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (i0, beta, rho))
    out = np.empty((len(i0), T))
    buf = np.empty((3, T))
    for j in range(len(i0)):
        bad = _sir_path(s0, i0[j], 1.0 - s0 - i0[j], beta[j], rho[j] * beta[j], 1, buf)
        out[j] = np.nan if bad else buf[1]
    return out


def linear_predictor(logit_i, mu, delta) -> np.ndarray:
    """logit(pi); the last week is ``mu[T]`` exactly, per the pinning constraint."""
    eta = logit_i + mu[..., None, :] + delta
    eta[..., -1] = mu[..., -1, None]
    return eta


@dataclass(frozen=True, eq=False)
class ModelState:
    """One full assignment of the model's latent variables.

    ``delta`` has shape (J, T); its last column must equal
    ``-logit(I[:, T])``. Use :meth:`build` to have it filled in.
    """

    i0: np.ndarray
    beta: np.ndarray
    rho: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    sigma2_delta: np.ndarray
    sigma2_muT: float
    sigma2_mu: float
    sigma_alpha: float
    a_delta: float
    b_delta: float
    s0: float = S0_DEFAULT
    infectious: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for f in ("i0", "beta", "rho", "mu", "delta", "alpha", "sigma2_delta"):
            arr = np.array(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)
        J, T = self.delta.shape
        if self.mu.shape != (T,) or any(getattr(self, f).shape != (J,) for f in
                                        ("i0", "beta", "rho", "alpha", "sigma2_delta")):
            raise ValueError("inconsistent ModelState shapes")
        I = infectious_curves(self.i0, self.beta, self.rho, T, self.s0)
        if not np.all(np.isfinite(I)) or np.any(I <= 0):
            raise ValueError("SIR parameters give an invalid infectious curve")
        I.setflags(write=False)
        object.__setattr__(self, "infectious", I)
        pinned = -logit(I[:, -1])
        if not np.allclose(self.delta[:, -1], pinned, rtol=0, atol=1e-9):
            raise ValueError("delta[:, T] must equal -logit(I[:, T])")

    @classmethod
    def build(cls, *, i0, beta, rho, mu, delta_free, alpha, sigma2_delta, sigma2_muT,
              sigma2_mu, sigma_alpha, a_delta, b_delta, s0=S0_DEFAULT) -> "ModelState":
        """Construct from the free part of ``delta`` (shape (J, T-1))."""
        delta_free = np.atleast_2d(np.asarray(delta_free, dtype=float))
        T = delta_free.shape[1] + 1
        I = infectious_curves(i0, beta, rho, T, s0)
        delta = np.column_stack([delta_free, -logit(I[:, -1])])
        return cls(i0, beta, rho, mu, delta, alpha, sigma2_delta, sigma2_muT, sigma2_mu,
                   sigma_alpha, a_delta, b_delta, s0)

    @property
    def J(self) -> int:
        return self.delta.shape[0]

    @property
    def T(self) -> int:
        return self.delta.shape[1]

    @property
    def pi(self) -> np.ndarray:
        return expit(linear_predictor(logit(self.infectious), self.mu, self.delta))

    def replace(self, **changes) -> "ModelState":
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        kw.update(changes)
        if "delta" not in changes and {"i0", "beta", "rho"} & set(changes):
            I = infectious_curves(kw["i0"], kw["beta"], kw["rho"], self.T, self.s0)
            delta = np.array(kw["delta"])
            delta[:, -1] = -logit(I[:, -1])
            kw["delta"] = delta
        return ModelState(**kw)


# -- density components ------------------------------------------------------

def log_lik_obs(y, pi, lam: float):
    """Beta(lam*pi, lam*(1-pi)) log density at ``y``."""
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any((y <= 0) | (y >= 1)):
        raise ValueError("Beta likelihood is undefined at y in {0, 1}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = lam * pi
    b = lam * (1.0 - pi)
    return ((a - 1) * np.log(y) + (b - 1) * np.log1p(-y) - special.betaln(a, b))[()]


def beta_sd(pi, lam: float):
    return np.sqrt(pi * (1 - pi) / (1 + lam))


def _norm_logpdf(x, mean, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def log_prior_mu(mu, sigma2_muT: float, sigma2_mu: float) -> float:
    """Reverse random walk: mu[T] ~ N(0, s2T), mu[t] | mu[t+1] ~ N(mu[t+1], s2)."""
    mu = np.asarray(mu, dtype=float)
    if mu.size < 2:
        raise ValueError("mu needs at least two weeks")
    if sigma2_muT <= 0 or sigma2_mu <= 0:
        raise ValueError("variances must be positive")
    return float(_norm_logpdf(mu[-1], 0.0, sigma2_muT)
                 + _norm_logpdf(mu[:-1], mu[1:], sigma2_mu).sum())


def log_prior_delta(delta, alpha: float, sigma2_delta: float, i_T: float) -> float:
    """Autoregressive reverse walk for one season; the pinned last week has no density."""
    delta = np.asarray(delta, dtype=float)
    assert math.isclose(delta[-1], -float(logit(i_T)), rel_tol=0, abs_tol=1e-9), \
        "delta[T] must equal -logit(I[T])"
    return float(_norm_logpdf(delta[:-1], alpha * delta[1:], sigma2_delta).sum())


def _gamma_logpdf(x, shape, rate):
    return stats.gamma.logpdf(x, shape, scale=1.0 / rate)


def log_hyperpriors(state: ModelState, constants: PriorConstants = PriorConstants()) -> float:
    """Hyperprior terms; -inf outside the support."""
    scalars = (state.sigma2_muT, state.sigma2_mu, state.sigma_alpha, state.a_delta, state.b_delta)
    if min(scalars) <= 0 or np.any(state.sigma2_delta <= 0):
        return -np.inf
    lo, hi = constants.alpha_bounds
    if np.any((state.alpha <= lo) | (state.alpha >= hi)):
        return -np.inf
    c = constants
    lp = _gamma_logpdf(1.0 / state.sigma2_muT, *c.prec_mu_T)
    lp += _gamma_logpdf(1.0 / state.sigma2_mu, *c.prec_mu)
    lp += _gamma_logpdf(1.0 / state.sigma2_delta, state.a_delta, state.b_delta).sum()
    lp += _gamma_logpdf(state.a_delta, *c.a_delta)
    lp += _gamma_logpdf(state.b_delta, *c.b_delta)
    lp += _gamma_logpdf(state.sigma_alpha, *c.sigma_alpha)
    center = logit(c.alpha_center)
    llo, lhi = c.logit_alpha_bounds
    s = state.sigma_alpha
    lp += stats.truncnorm.logpdf(logit(state.alpha), (llo - center) / s, (lhi - center) / s,
                                 loc=center, scale=s).sum()
    return float(lp)


def log_joint(state: ModelState, panel: SeasonPanel, prior: TruncatedMvnPrior,
              config: DataModelConfig = DataModelConfig(),
              constants: PriorConstants = PriorConstants()) -> float:
    """Unnormalised log posterior of ``state`` given ``panel``.

    Missing observations contribute no likelihood term.
    """
    if panel.values.shape != state.delta.shape:
        raise ValueError("panel and state disagree on (seasons, weeks)")
    lp = log_hyperpriors(state, constants)
    if not np.isfinite(lp):
        return -np.inf
    triples = np.column_stack([state.i0, state.beta, state.rho])
    lp += float(np.sum(prior.logpdf(triples)))
    if not np.isfinite(lp):
        return -np.inf
    lp += log_prior_mu(state.mu, state.sigma2_muT, state.sigma2_mu)
    I = state.infectious
    for j in range(state.J):
        lp += log_prior_delta(state.delta[j], state.alpha[j], state.sigma2_delta[j], I[j, -1])
    obs = panel.observed
    if obs.any():
        pi = state.pi
        lp += float(np.sum(log_lik_obs(panel.values[obs], pi[obs], config.lam)))
    return lp if np.isfinite(lp) else -np.inf


# -- simulation from the model ------------------------------------------------

def simulate_panel(seasons, prior: TruncatedMvnPrior, rng: np.random.Generator, *,
                   config: DataModelConfig = DataModelConfig(),
                   constants: PriorConstants = PriorConstants(),
                   mu=None, sigma2_muT=0.01, sigma2_mu=0.04, sigma_alpha=0.5,
                   a_delta=5.0, b_delta=0.1) -> tuple[SeasonPanel, ModelState]:
    """Draw a state and a wILI panel from the model.

    Hyperparameters are fixed at the keyword values; season-level
    quantities are drawn from their conditional priors. ``mu`` may be
    supplied as a fixed common discrepancy path.
    """
    from .priors import sample_prior

    J, T = len(seasons), config.T
    while True:
        theta = sample_prior(prior, rng, size=J)
        I = infectious_curves(theta[:, 0], theta[:, 1], theta[:, 2], T, constants.s0)
        if np.all(np.isfinite(I)) and np.all(I > 0):
            break
    if mu is None:
        mu = np.empty(T)
        mu[-1] = rng.normal(0.0, math.sqrt(sigma2_muT))
        for t in range(T - 2, -1, -1):
            mu[t] = rng.normal(mu[t + 1], math.sqrt(sigma2_mu))
    mu = np.asarray(mu, dtype=float)
    center = float(logit(constants.alpha_center))
    llo, lhi = constants.logit_alpha_bounds
    la = stats.truncnorm.rvs((llo - center) / sigma_alpha, (lhi - center) / sigma_alpha,
                             loc=center, scale=sigma_alpha, size=J, random_state=rng)
    alpha = expit(la)
    tau = rng.gamma(a_delta, 1.0 / b_delta, size=J)
    delta = np.empty((J, T))
    delta[:, -1] = -logit(I[:, -1])
    for t in range(T - 2, -1, -1):
        delta[:, t] = rng.normal(alpha * delta[:, t + 1], 1.0 / np.sqrt(tau))
    state = ModelState(theta[:, 0], theta[:, 1], theta[:, 2], mu, delta, alpha, 1.0 / tau,
                       sigma2_muT, sigma2_mu, sigma_alpha, a_delta, b_delta, constants.s0)
    pi = state.pi
    y = rng.beta(config.lam * pi, config.lam * (1 - pi))
    y = np.clip(y, 1e-6, 1 - 1e-6)
    return SeasonPanel(tuple(seasons), y), state


def load_model_config(path) -> tuple[DataModelConfig, PriorConstants]:
    """Read ``[model]`` and ``[priors]`` tables of a TOML config file."""
    from .config import read_toml

    doc = read_toml(path)
    m = doc.get("model", {})
    cfg = DataModelConfig(lam=float(m.get("lambda", 4500.0)), T=int(m.get("T", T_DEFAULT)))
    p = doc.get("priors", {})
    kw = {}
    for key in ("prec_mu_T", "prec_mu", "a_delta", "b_delta", "sigma_alpha", "alpha_bounds"):
        if key in p:
            kw[key] = tuple(float(v) for v in p[key])
    for key in ("alpha_center", "s0"):
        if key in p:
            kw[key] = float(p[key])
    return cfg, PriorConstants(**kw)
