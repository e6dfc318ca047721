"""Per-season SIR fits and the truncated Gaussian prior built from them."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, stats

from .sir import S0_DEFAULT, SirParams, _sir_path

I0_BOUNDS = (0.0, 0.1)
BETA_BOUNDS = (0.0, np.inf)
RHO_BOUNDS = (0.0, 0.9)
# optimizer-only ceiling on beta, keeps the weekly RK4 step stable
FIT_BETA_MAX = 5.0
MAX_REJECTIONS = 10**6

LOWER = np.array([I0_BOUNDS[0], BETA_BOUNDS[0], RHO_BOUNDS[0]])
UPPER = np.array([I0_BOUNDS[1], BETA_BOUNDS[1], RHO_BOUNDS[1]])


class OptimizationFailed(RuntimeError):
    pass


class SingularCovariance(ValueError):
    pass


class RejectionExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class SeasonSirFit:
    season: int
    params: SirParams
    sse: float

    @property
    def triple(self) -> np.ndarray:
        return np.array([self.params.i0, self.params.beta, self.params.rho])


def in_bounds(x) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.all((x > LOWER) & (x < UPPER), axis=-1)


@dataclass(frozen=True, eq=False)
class TruncatedMvnPrior:
    """Gaussian on (i0, beta, rho) restricted to the fixed truncation box."""

    mean: np.ndarray
    cov: np.ndarray
    seasons: tuple[int, ...] = field(default=())

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(3)
        cov = np.array(self.cov, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-14 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise SingularCovariance("covariance is not positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "seasons", tuple(self.seasons))

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return (I0_BOUNDS, BETA_BOUNDS, RHO_BOUNDS)

    @cached_property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.cov)

    @cached_property
    def log_mass(self) -> float:
        """Log Gaussian probability of the truncation box."""
        mvn = stats.multivariate_normal(self.mean, self.cov)
        mass = mvn.cdf(UPPER, lower_limit=LOWER)
        return float(np.log(mass))

    def logpdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        lp = stats.multivariate_normal(self.mean, self.cov).logpdf(x) - self.log_mass
        return np.where(in_bounds(x).reshape(np.shape(lp)), lp, -np.inf)[()]


def _objective_factory(wili, s0):
    T = len(wili)
    obs = np.isfinite(wili)
    y = wili[obs]
    buf = np.empty((3, T))

    def unpack(z):
        sig = 1.0 / (1.0 + np.exp(-np.asarray(z)))
        return I0_BOUNDS[1] * sig[0], FIT_BETA_MAX * sig[1], RHO_BOUNDS[1] * sig[2]

    def sse(theta):
        i0, beta, rho = theta
        if _sir_path(s0, i0, 1.0 - s0 - i0, beta, rho * beta, 1, buf):
            return np.inf
        r = buf[1, obs] - y
        return float(r @ r)

    return unpack, sse


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _start_grid():
    i0s = (0.001, 0.005, 0.02)
    betas = (0.5, 1.0, 2.0)
    rhos = (0.5, 0.7, 0.85)
    return list(itertools.product(i0s, betas, rhos))


def fit_sir_to_season(wili, season: int = 0, s0: float = S0_DEFAULT,
                      n_starts: int = 10) -> SeasonSirFit:
    """Least-squares SIR fit of the infectious curve to one season.

    The susceptible fraction is pinned at ``s0``; (i0, beta, rho) are
    searched with Nelder-Mead from the ``n_starts`` best points of a coarse
    grid, in logit coordinates so the bounds always hold. The lowest SSE
    wins, ties going to the smaller beta.
    """
    wili = np.asarray(wili, dtype=float)
    obs = np.isfinite(wili)
    if obs.sum() < 10:
        raise ValueError("need at least 10 observed weeks")
    if np.any((wili[obs] <= 0) | (wili[obs] >= 1)):
        raise ValueError("wILI must lie in (0, 1)")
    unpack, sse = _objective_factory(wili, s0)

    def obj(z):
        return sse(unpack(z))

    grid = sorted(_start_grid(), key=lambda th: sse(th))[:n_starts]
    results = []
    for th in grid:
        z0 = np.array([_logit(th[0] / I0_BOUNDS[1]), _logit(th[1] / FIT_BETA_MAX),
                       _logit(th[2] / RHO_BOUNDS[1])])
        best = None
        # restart the simplex until it stops improving
        for _ in range(6):
            res = optimize.minimize(obj, z0, method="Nelder-Mead",
                                    options={"xatol": 1e-11, "fatol": 1e-18,
                                             "maxiter": 20000, "maxfev": 40000,
                                             "adaptive": True})
            improved = best is None or res.fun < best.fun * (1 - 1e-10)
            if best is None or res.fun < best.fun:
                best = res
            if not improved:
                break
            z0 = res.x
        i0, beta, rho = unpack(best.x)
        feasible = (np.isfinite(best.fun) and 0 < i0 < I0_BOUNDS[1]
                    and 0 < beta < FIT_BETA_MAX and 0 < rho < RHO_BOUNDS[1] - 1e-9)
        if feasible:
            results.append((float(best.fun), float(beta), (float(i0), float(beta), float(rho))))
    if not results:
        raise OptimizationFailed(f"season {season}: no start produced a feasible fit")
    best_sse = min(r[0] for r in results)
    tied = [r for r in results if r[0] <= best_sse + 1e-12 * max(best_sse, 1e-300)]
    fun, _, (i0, beta, rho) = min(tied, key=lambda r: r[1])
    return SeasonSirFit(int(season), SirParams(s0, i0, beta, rho), fun)


def fit_panel(panel, seasons: Iterable[int] | None = None) -> dict[int, SeasonSirFit]:
    seasons = panel.seasons if seasons is None else seasons
    return {s: fit_sir_to_season(panel.season_values(s), season=s) for s in seasons}


def fit_prior(fits: Sequence[SeasonSirFit], exclude=None) -> TruncatedMvnPrior:
    """Sample mean and covariance of the included seasons' (i0, beta, rho).

    ``exclude`` is a season id or a collection of them.
    """
    if exclude is None:
        excluded = set()
    elif np.ndim(exclude) == 0:
        excluded = {int(exclude)}
    else:
        excluded = {int(e) for e in exclude}
    kept = [f for f in fits if f.season not in excluded]
    if len(kept) < 3:
        raise ValueError(f"need at least 3 season fits, have {len(kept)}")
    X = np.array([f.triple for f in kept])
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)
    if not _is_pd(cov):
        # single relative jitter, then give up
        cov = cov + 1e-10 * np.mean(np.diag(cov)) * np.eye(3)
        if not _is_pd(cov):
            raise SingularCovariance("sample covariance of SIR fits is singular")
    return TruncatedMvnPrior(mean, cov, tuple(f.season for f in kept))


def _is_pd(cov) -> bool:
    """Positive definite to working precision (numerical-rank tolerance)."""
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    eig = np.linalg.eigvalsh(cov)
    return eig.min() > len(eig) * np.finfo(float).eps * eig.max()


def sample_prior(prior: TruncatedMvnPrior, rng: np.random.Generator, size: int | None = None,
                 return_rate: bool = False):
    """Rejection-sample (i0, beta, rho) from the truncated prior.

    Returns a length-3 array (``size=None``) or an ``(size, 3)`` array, plus
    the empirical acceptance rate if ``return_rate``.
    """
    n = 1 if size is None else int(size)
    chol = np.linalg.cholesky(prior.cov)
    out = np.empty((n, 3))
    filled = tried = streak = 0
    batch = max(64, 2 * n)
    while filled < n:
        x = prior.mean + rng.standard_normal((batch, 3)) @ chol.T
        ok = in_bounds(x)
        tried += batch
        if not ok.any():
            streak += batch
            if streak >= MAX_REJECTIONS:
                raise RejectionExhausted(f"{streak} consecutive rejections")
            continue
        streak = 0
        take = x[ok][: n - filled]
        out[filled:filled + len(take)] = take
        filled += len(take)
        if filled < n:
            continue
        # acceptance rate counts draws up to the last one kept
        last = np.flatnonzero(ok)[len(take) - 1]
        tried -= batch - last - 1
    draws = out[0] if size is None else out
    if return_rate:
        return draws, n / tried
    return draws


def to_params(triple, s0: float = S0_DEFAULT) -> SirParams:
    """SirParams with r0 set for mass balance."""
    i0, beta, rho = (float(v) for v in triple)
    return SirParams(s0, i0, beta, rho)


# -- persistence -------------------------------------------------------------

FIT_COLUMNS = ("season", "i0", "beta", "rho", "sse")


def write_fits(fits: Iterable[SeasonSirFit], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIT_COLUMNS)
        for f in sorted(fits, key=lambda f: f.season):
            w.writerow([f.season, repr(f.params.i0), repr(f.params.beta),
                        repr(f.params.rho), repr(f.sse)])


def read_fits(path, s0: float = S0_DEFAULT) -> list[SeasonSirFit]:
    with Path(path).open(newline="") as fh:
        return [SeasonSirFit(int(r["season"]),
                             SirParams(s0, float(r["i0"]), float(r["beta"]), float(r["rho"])),
                             float(r["sse"]))
                for r in csv.DictReader(fh)]


def write_prior(prior: TruncatedMvnPrior, path) -> None:
    doc = {"mean": prior.mean.tolist(), "cov": prior.cov.tolist(),
           "seasons": list(prior.seasons),
           "bounds": {"i0": list(I0_BOUNDS), "beta": [0.0, "inf"], "rho": list(RHO_BOUNDS)}}
    Path(path).write_text(json.dumps(doc, indent=2))


def read_prior(path) -> TruncatedMvnPrior:
    doc = json.loads(Path(path).read_text())
    return TruncatedMvnPrior(np.array(doc["mean"]), np.array(doc["cov"]), tuple(doc["seasons"]))
