"""Compiled Metropolis-within-Gibbs sweep.

Index conventions: season ``j`` in ``0..J-1``, week ``t`` in ``0..T-1``.

    theta[j]     (i0, beta, rho)
    lgi[j, t]    logit of the SIR infectious curve
    delta[j, T-1] is kept equal to -lgi[j, T-1]
    la[j]        logit(alpha_j)
    tau[j]       1 / sigma2_delta[j]
    hyp          (tau_muT, tau_mu, sigma_alpha, a_delta, b_delta)

All local densities drop constants that do not depend on the block being
updated; ``log_target`` keeps every state-dependent term.
"""
import math

import numpy as np
from numba import njit

from .sir import _sir_path

# constant vector layout
C_LAM, C_LGLAM, C_S0 = 0, 1, 2
C_MUT_A, C_MUT_B, C_MU_A, C_MU_B = 3, 4, 5, 6
C_AD_A, C_AD_B, C_BD_A, C_BD_B, C_SA_A, C_SA_B = 7, 8, 9, 10, 11, 12
C_AL_M, C_AL_LO, C_AL_HI, C_I0_HI, C_RHO_HI = 13, 14, 15, 16, 17
N_CONST = 18

H_TMT, H_TMU, H_SA, H_AD, H_BD = 0, 1, 2, 3, 4

# acceptance bookkeeping rows
K_SIR_PLAIN, K_SIR_PI, K_SIR_AR = 0, 1, 2
K_MU, K_SHIFT, K_DELTA, K_ALPHA, K_ALPHA_RES, K_SIGMA_ALPHA, K_A_DELTA = 3, 4, 5, 6, 7, 8, 9
K_TRADE, K_TRADE_PATH = 10, 11
N_KINDS = 12

TARGET_SINGLE = 0.44
TARGET_BLOCK = 0.234


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _logit(p):
    return math.log(p) - math.log1p(-p)


@njit(cache=True)
def _expit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def loglik(logy, log1my, eta, C):
    lam = C[C_LAM]
    a = lam * math.exp(-_softplus(-eta))
    b = lam * math.exp(-_softplus(eta))
    if a <= 0.0 or b <= 0.0:
        return -np.inf
    return (a - 1.0) * logy + (b - 1.0) * log1my - math.lgamma(a) - math.lgamma(b) + C[C_LGLAM]


@njit(cache=True)
def season_loglik(j, lgi_j, mu, delta_j, logy, log1my, obs, C):
    T = mu.shape[0]
    lp = 0.0
    for t in range(T):
        if obs[j, t]:
            if t == T - 1:
                eta = mu[t]
            else:
                eta = lgi_j[t] + mu[t] + delta_j[t]
            lp += loglik(logy[j, t], log1my[j, t], eta, C)
    return lp


@njit(cache=True)
def delta_prior(delta_j, alpha, tau):
    T = delta_j.shape[0]
    ss = 0.0
    for t in range(T - 1):
        r = delta_j[t] - alpha * delta_j[t + 1]
        ss += r * r
    return -0.5 * tau * ss


@njit(cache=True)
def sir_prior(i0, beta, rho, pmean, pprec, C):
    if not (i0 > 0.0 and i0 < C[C_I0_HI] and beta > 0.0 and rho > 0.0 and rho < C[C_RHO_HI]):
        return -np.inf
    d0 = i0 - pmean[0]
    d1 = beta - pmean[1]
    d2 = rho - pmean[2]
    q = (pprec[0, 0] * d0 * d0 + pprec[1, 1] * d1 * d1 + pprec[2, 2] * d2 * d2
         + 2.0 * (pprec[0, 1] * d0 * d1 + pprec[0, 2] * d0 * d2 + pprec[1, 2] * d1 * d2))
    return -0.5 * q


@njit(cache=True)
def sir_log_jacobian(i0, beta, rho, C):
    """log |d theta / d z| for z = (logit(i0/hi), log beta, logit(rho/hi))."""
    return (math.log(i0) + math.log1p(-i0 / C[C_I0_HI]) + math.log(beta)
            + math.log(rho) + math.log1p(-rho / C[C_RHO_HI]))


@njit(cache=True)
def infectious_logit(i0, beta, rho, C, buf, out):
    """Write logit(I) into ``out``; False if the curve is unusable."""
    s0 = C[C_S0]
    if _sir_path(s0, i0, 1.0 - s0 - i0, beta, rho * beta, 1, buf) != 0:
        return False
    for t in range(out.shape[0]):
        v = buf[1, t]
        if v <= 0.0 or v >= 1.0:
            return False
        out[t] = _logit(v)
    return True


@njit(cache=True)
def tn_log_norm(sigma, C):
    """log P(lo < N(m, sigma^2) < hi) for the logit(alpha) prior."""
    m = C[C_AL_M]
    zhi = (C[C_AL_HI] - m) / sigma
    zlo = (C[C_AL_LO] - m) / sigma
    p = 0.5 * (math.erf(zhi / math.sqrt(2.0)) - math.erf(zlo / math.sqrt(2.0)))
    if p <= 0.0:
        return -np.inf
    return math.log(p)


@njit(cache=True)
def alpha_prior(la, sigma, C):
    if la <= C[C_AL_LO] or la >= C[C_AL_HI]:
        return -np.inf
    z = (la - C[C_AL_M]) / sigma
    return -0.5 * z * z


@njit(cache=True)
def sigma_alpha_target(sa, la, C):
    """Density of sigma_alpha given the logit(alpha_j), excluding the log-scale Jacobian."""
    if sa <= 0.0:
        return -np.inf
    J = la.shape[0]
    lp = (C[C_SA_A] - 1.0) * math.log(sa) - C[C_SA_B] * sa
    lp -= J * (math.log(sa) + tn_log_norm(sa, C))
    for j in range(J):
        z = (la[j] - C[C_AL_M]) / sa
        lp -= 0.5 * z * z
    return lp


@njit(cache=True)
def a_delta_target(a, b, tau, C):
    if a <= 0.0:
        return -np.inf
    J = tau.shape[0]
    lp = (C[C_AD_A] - 1.0) * math.log(a) - C[C_AD_B] * a
    lp += J * (a * math.log(b) - math.lgamma(a))
    for j in range(J):
        lp += (a - 1.0) * math.log(tau[j])
    return lp


@njit(cache=True)
def mu_site_target(t, m, mu, hyp, lgi, delta, logy, log1my, obs, C):
    T = mu.shape[0]
    if t == T - 1:
        lp = -0.5 * hyp[H_TMT] * m * m
    else:
        d = m - mu[t + 1]
        lp = -0.5 * hyp[H_TMU] * d * d
    if t >= 1:
        d = mu[t - 1] - m
        lp -= 0.5 * hyp[H_TMU] * d * d
    for j in range(lgi.shape[0]):
        if obs[j, t]:
            if t == T - 1:
                eta = m
            else:
                eta = lgi[j, t] + m + delta[j, t]
            lp += loglik(logy[j, t], log1my[j, t], eta, C)
    return lp


@njit(cache=True)
def delta_site_target(j, t, d, delta, la, tau, lgi, mu, logy, log1my, obs, C):
    alpha = _expit(la[j])
    r = d - alpha * delta[j, t + 1]
    lp = -0.5 * tau[j] * r * r
    if t >= 1:
        r = delta[j, t - 1] - alpha * d
        lp -= 0.5 * tau[j] * r * r
    if obs[j, t]:
        lp += loglik(logy[j, t], log1my[j, t], lgi[j, t] + mu[t] + d, C)
    return lp


@njit(cache=True)
def trade_site_diff(t, c, mu, delta, la, tau, hyp):
    """Log-target change from mu[t] += c, delta[:, t] -= c (t < T-1).

    pi is unchanged, so only the two walks contribute.
    """
    T = mu.shape[0]
    m_old = mu[t]
    m_new = m_old + c
    d = -0.5 * hyp[H_TMU] * ((m_new - mu[t + 1]) ** 2 - (m_old - mu[t + 1]) ** 2)
    if t >= 1:
        d -= 0.5 * hyp[H_TMU] * ((mu[t - 1] - m_new) ** 2 - (mu[t - 1] - m_old) ** 2)
    for j in range(delta.shape[0]):
        a = _expit(la[j])
        x_old = delta[j, t]
        x_new = x_old - c
        acc = (x_new - a * delta[j, t + 1]) ** 2 - (x_old - a * delta[j, t + 1]) ** 2
        if t >= 1:
            acc += (delta[j, t - 1] - a * x_new) ** 2 - (delta[j, t - 1] - a * x_old) ** 2
        d -= 0.5 * tau[j] * acc
    return d


@njit(cache=True)
def trade_path_diff(c, mu, delta, la, tau, hyp):
    """Log-target change from mu[:T-1] += c, delta[:, :T-1] -= c."""
    T = mu.shape[0]
    d = -0.5 * hyp[H_TMU] * ((mu[T - 2] + c - mu[T - 1]) ** 2 - (mu[T - 2] - mu[T - 1]) ** 2)
    for j in range(delta.shape[0]):
        a = _expit(la[j])
        acc = 0.0
        for t in range(T - 1):
            nxt = c if t + 1 < T - 1 else 0.0
            r_old = delta[j, t] - a * delta[j, t + 1]
            r_new = r_old - c + a * nxt
            acc += r_new * r_new - r_old * r_old
        d -= 0.5 * tau[j] * acc
    return d


@njit(cache=True)
def log_target(theta, lgi, mu, delta, la, tau, hyp, logy, log1my, obs, C, pmean, pprec):
    """Full unnormalised log posterior on the sampler's coordinates."""
    J, T = delta.shape
    tmt, tmu, sa, a, b = hyp[H_TMT], hyp[H_TMU], hyp[H_SA], hyp[H_AD], hyp[H_BD]
    if tmt <= 0.0 or tmu <= 0.0 or sa <= 0.0 or a <= 0.0 or b <= 0.0:
        return -np.inf
    lp = 0.0
    for j in range(J):
        lp += sir_prior(theta[j, 0], theta[j, 1], theta[j, 2], pmean, pprec, C)
        if tau[j] <= 0.0:
            return -np.inf
        lp += 0.5 * (T - 1) * math.log(tau[j]) + delta_prior(delta[j], _expit(la[j]), tau[j])
        lp += season_loglik(j, lgi[j], mu, delta[j], logy, log1my, obs, C)
        lp += alpha_prior(la[j], sa, C)
    # mu walk
    lp += 0.5 * math.log(tmt) - 0.5 * tmt * mu[T - 1] * mu[T - 1]
    ss = 0.0
    for t in range(T - 1):
        d = mu[t] - mu[t + 1]
        ss += d * d
    lp += 0.5 * (T - 1) * math.log(tmu) - 0.5 * tmu * ss
    # precisions and hyperparameters
    lp += (C[C_MUT_A] - 1.0) * math.log(tmt) - C[C_MUT_B] * tmt
    lp += (C[C_MU_A] - 1.0) * math.log(tmu) - C[C_MU_B] * tmu
    lp += a_delta_target(a, b, tau, C)
    for j in range(J):
        lp -= b * tau[j]
    lp += (C[C_BD_A] - 1.0) * math.log(b) - C[C_BD_B] * b
    lp += (C[C_SA_A] - 1.0) * math.log(sa) - C[C_SA_B] * sa
    lp -= J * (math.log(sa) + tn_log_norm(sa, C))
    return lp


@njit(cache=True)
def _sir_season_target(j, i0, beta, rho, lgi_j, delta_j, la, tau, mu, logy, log1my, obs,
                       C, pmean, pprec):
    lp = sir_prior(i0, beta, rho, pmean, pprec, C)
    if lp == -np.inf:
        return lp
    lp += sir_log_jacobian(i0, beta, rho, C)
    lp += delta_prior(delta_j, _expit(la[j]), tau[j])
    lp += season_loglik(j, lgi_j, mu, delta_j, logy, log1my, obs, C)
    return lp


@njit(cache=True)
def propose_delta(kind, delta_j, lgi_old, lgi_new, alpha, out):
    """Companion ``delta`` for an SIR proposal.

    kind 0 keeps the free deltas; kind 1 keeps ``pi`` fixed; kind 2 shifts
    along the autoregressive mean so the walk's residuals are unchanged.
    """
    T = delta_j.shape[0]
    new_end = -lgi_new[T - 1]
    if kind == 0:
        for t in range(T - 1):
            out[t] = delta_j[t]
    elif kind == 1:
        for t in range(T - 1):
            out[t] = delta_j[t] + lgi_old[t] - lgi_new[t]
    else:
        shift = new_end - delta_j[T - 1]
        w = 1.0
        for t in range(T - 2, -1, -1):
            w *= alpha
            out[t] = delta_j[t] + w * shift
    out[T - 1] = new_end


@njit(cache=True)
def rebuild_delta_for_alpha(delta_j, alpha_old, alpha_new, out):
    """Re-thread ``delta`` under a new alpha keeping every residual fixed."""
    T = delta_j.shape[0]
    out[T - 1] = delta_j[T - 1]
    for t in range(T - 2, -1, -1):
        out[t] = delta_j[t] - alpha_old * delta_j[t + 1] + alpha_new * out[t + 1]


@njit(cache=True)
def _adapt(ls, count, window, target, k):
    g = min(0.5, 1.0 / math.sqrt(k))
    rate = count / window
    return ls + g * (rate - target)


@njit(cache=True, nogil=True)
def run_sweeps(rng, n_iter, n_burn, thin, window,
               logy, log1my, obs, C, pmean, pprec, pchol,
               theta, lgi, mu, delta, la, tau, hyp,
               ls_sir, ls_mu, ls_delta, ls_alpha, ls_hyp,
               out_theta, out_lgi, out_mu, out_delta, out_la, out_tau, out_hyp, out_lt, acc):
    J, T = delta.shape
    buf = np.empty((3, T))
    lgi_new = np.empty(T)
    d_new = np.empty(T)
    z = np.empty(3)
    eps = np.empty(3)
    w_sir = np.zeros((3, J))
    w_mu = np.zeros((2, T))
    w_delta = np.zeros((J, T))
    w_alpha = np.zeros((2, J))
    w_hyp = np.zeros(4)
    I0_HI = C[C_I0_HI]
    RHO_HI = C[C_RHO_HI]
    kept = 0
    for it in range(n_iter):
        post = it >= n_burn
        # --- SIR triples, three companion moves each ---
        for j in range(J):
            for kind in range(3):
                i0, beta, rho = theta[j, 0], theta[j, 1], theta[j, 2]
                z[0] = _logit(i0 / I0_HI)
                z[1] = math.log(beta)
                z[2] = _logit(rho / RHO_HI)
                for q in range(3):
                    eps[q] = rng.normal()
                step = math.exp(ls_sir[kind, j])
                for q in range(3):
                    s = 0.0
                    for r in range(q + 1):
                        s += pchol[q, r] * eps[r]
                    z[q] += step * s
                ni0 = I0_HI * _expit(z[0])
                nbeta = math.exp(z[1])
                nrho = RHO_HI * _expit(z[2])
                if post:
                    acc[kind, 1] += 1
                if not (ni0 > 0.0 and ni0 < I0_HI and nrho > 0.0 and nrho < RHO_HI
                        and nbeta > 0.0 and nbeta < 1e6):
                    continue
                if not infectious_logit(ni0, nbeta, nrho, C, buf, lgi_new):
                    continue
                propose_delta(kind, delta[j], lgi[j], lgi_new, _expit(la[j]), d_new)
                old = _sir_season_target(j, i0, beta, rho, lgi[j], delta[j], la, tau, mu,
                                         logy, log1my, obs, C, pmean, pprec)
                new = _sir_season_target(j, ni0, nbeta, nrho, lgi_new, d_new, la, tau, mu,
                                         logy, log1my, obs, C, pmean, pprec)
                if math.log(rng.random()) < new - old:
                    theta[j, 0] = ni0
                    theta[j, 1] = nbeta
                    theta[j, 2] = nrho
                    lgi[j, :] = lgi_new
                    delta[j, :] = d_new
                    w_sir[kind, j] += 1
                    if post:
                        acc[kind, 0] += 1
        # --- common discrepancy, single site ---
        for t in range(T):
            cur = mu[t]
            prop = cur + math.exp(ls_mu[0, t]) * rng.normal()
            old = mu_site_target(t, cur, mu, hyp, lgi, delta, logy, log1my, obs, C)
            new = mu_site_target(t, prop, mu, hyp, lgi, delta, logy, log1my, obs, C)
            if post:
                acc[K_MU, 1] += 1
            if math.log(rng.random()) < new - old:
                mu[t] = prop
                w_mu[0, t] += 1
                if post:
                    acc[K_MU, 0] += 1
        # --- common discrepancy, whole-path shift ---
        c = math.exp(ls_hyp[0]) * rng.normal()
        diff = -0.5 * hyp[H_TMT] * ((mu[T - 1] + c) ** 2 - mu[T - 1] ** 2)
        for j in range(J):
            for t in range(T):
                if obs[j, t]:
                    if t == T - 1:
                        eta = mu[t]
                    else:
                        eta = lgi[j, t] + mu[t] + delta[j, t]
                    diff += (loglik(logy[j, t], log1my[j, t], eta + c, C)
                             - loglik(logy[j, t], log1my[j, t], eta, C))
        if post:
            acc[K_SHIFT, 1] += 1
        if math.log(rng.random()) < diff:
            for t in range(T):
                mu[t] += c
            w_hyp[0] += 1
            if post:
                acc[K_SHIFT, 0] += 1
        # --- season discrepancy, single site ---
        for j in range(J):
            for t in range(T - 1):
                cur = delta[j, t]
                prop = cur + math.exp(ls_delta[j, t]) * rng.normal()
                old = delta_site_target(j, t, cur, delta, la, tau, lgi, mu, logy, log1my, obs, C)
                new = delta_site_target(j, t, prop, delta, la, tau, lgi, mu, logy, log1my, obs, C)
                if post:
                    acc[K_DELTA, 1] += 1
                if math.log(rng.random()) < new - old:
                    delta[j, t] = prop
                    w_delta[j, t] += 1
                    if post:
                        acc[K_DELTA, 0] += 1
        # --- common/season trade, likelihood-neutral ---
        for t in range(T - 1):
            c = math.exp(ls_mu[1, t]) * rng.normal()
            if post:
                acc[K_TRADE, 1] += 1
            if math.log(rng.random()) < trade_site_diff(t, c, mu, delta, la, tau, hyp):
                mu[t] += c
                for j in range(J):
                    delta[j, t] -= c
                w_mu[1, t] += 1
                if post:
                    acc[K_TRADE, 0] += 1
        c = math.exp(ls_hyp[3]) * rng.normal()
        if post:
            acc[K_TRADE_PATH, 1] += 1
        if math.log(rng.random()) < trade_path_diff(c, mu, delta, la, tau, hyp):
            for t in range(T - 1):
                mu[t] += c
                for j in range(J):
                    delta[j, t] -= c
            w_hyp[3] += 1
            if post:
                acc[K_TRADE_PATH, 0] += 1
        # --- autoregression coefficients ---
        for j in range(J):
            cur = la[j]
            prop = cur + math.exp(ls_alpha[0, j]) * rng.normal()
            old = alpha_prior(cur, hyp[H_SA], C) + delta_prior(delta[j], _expit(cur), tau[j])
            new = alpha_prior(prop, hyp[H_SA], C)
            if new > -np.inf:
                new += delta_prior(delta[j], _expit(prop), tau[j])
            if post:
                acc[K_ALPHA, 1] += 1
            if math.log(rng.random()) < new - old:
                la[j] = prop
                w_alpha[0, j] += 1
                if post:
                    acc[K_ALPHA, 0] += 1
            # residual-preserving companion move
            cur = la[j]
            prop = cur + math.exp(ls_alpha[1, j]) * rng.normal()
            if post:
                acc[K_ALPHA_RES, 1] += 1
            new = alpha_prior(prop, hyp[H_SA], C)
            if new == -np.inf:
                continue
            rebuild_delta_for_alpha(delta[j], _expit(cur), _expit(prop), d_new)
            old = alpha_prior(cur, hyp[H_SA], C) + season_loglik(
                j, lgi[j], mu, delta[j], logy, log1my, obs, C)
            new += season_loglik(j, lgi[j], mu, d_new, logy, log1my, obs, C)
            if math.log(rng.random()) < new - old:
                la[j] = prop
                delta[j, :] = d_new
                w_alpha[1, j] += 1
                if post:
                    acc[K_ALPHA_RES, 0] += 1
        # --- conjugate precision updates ---
        a, b = hyp[H_AD], hyp[H_BD]
        for j in range(J):
            alpha = _expit(la[j])
            ss = 0.0
            for t in range(T - 1):
                r = delta[j, t] - alpha * delta[j, t + 1]
                ss += r * r
            tau[j] = rng.standard_gamma(a + 0.5 * (T - 1)) / (b + 0.5 * ss)
        hyp[H_TMT] = rng.standard_gamma(C[C_MUT_A] + 0.5) / (C[C_MUT_B] + 0.5 * mu[T - 1] ** 2)
        ss = 0.0
        for t in range(T - 1):
            ss += (mu[t] - mu[t + 1]) ** 2
        hyp[H_TMU] = rng.standard_gamma(C[C_MU_A] + 0.5 * (T - 1)) / (C[C_MU_B] + 0.5 * ss)
        # --- sigma_alpha, log-scale walk ---
        cur = hyp[H_SA]
        prop = cur * math.exp(math.exp(ls_hyp[1]) * rng.normal())
        old = sigma_alpha_target(cur, la, C) + math.log(cur)
        new = sigma_alpha_target(prop, la, C) + math.log(prop)
        if post:
            acc[K_SIGMA_ALPHA, 1] += 1
        if math.log(rng.random()) < new - old:
            hyp[H_SA] = prop
            w_hyp[1] += 1
            if post:
                acc[K_SIGMA_ALPHA, 0] += 1
        # --- a_delta (log-scale walk), b_delta (conjugate) ---
        cur = hyp[H_AD]
        prop = cur * math.exp(math.exp(ls_hyp[2]) * rng.normal())
        old = a_delta_target(cur, hyp[H_BD], tau, C) + math.log(cur)
        new = a_delta_target(prop, hyp[H_BD], tau, C) + math.log(prop)
        if post:
            acc[K_A_DELTA, 1] += 1
        if math.log(rng.random()) < new - old:
            hyp[H_AD] = prop
            w_hyp[2] += 1
            if post:
                acc[K_A_DELTA, 0] += 1
        stau = 0.0
        for j in range(J):
            stau += tau[j]
        hyp[H_BD] = rng.standard_gamma(C[C_BD_A] + J * hyp[H_AD]) / (C[C_BD_B] + stau)

        # --- adaptation, burn-in only ---
        if (not post) and (it + 1) % window == 0:
            k = (it + 1) // window
            for kind in range(3):
                for j in range(J):
                    ls_sir[kind, j] = _adapt(ls_sir[kind, j], w_sir[kind, j], window,
                                             TARGET_BLOCK, k)
                    w_sir[kind, j] = 0.0
            for q in range(2):
                for t in range(T):
                    ls_mu[q, t] = _adapt(ls_mu[q, t], w_mu[q, t], window, TARGET_SINGLE, k)
                    w_mu[q, t] = 0.0
            for j in range(J):
                for t in range(T - 1):
                    ls_delta[j, t] = _adapt(ls_delta[j, t], w_delta[j, t], window,
                                            TARGET_SINGLE, k)
                    w_delta[j, t] = 0.0
                for q in range(2):
                    ls_alpha[q, j] = _adapt(ls_alpha[q, j], w_alpha[q, j], window,
                                            TARGET_SINGLE, k)
                    w_alpha[q, j] = 0.0
            ls_hyp[0] = _adapt(ls_hyp[0], w_hyp[0], window, TARGET_BLOCK, k)
            ls_hyp[1] = _adapt(ls_hyp[1], w_hyp[1], window, TARGET_SINGLE, k)
            ls_hyp[2] = _adapt(ls_hyp[2], w_hyp[2], window, TARGET_SINGLE, k)
            ls_hyp[3] = _adapt(ls_hyp[3], w_hyp[3], window, TARGET_BLOCK, k)
            w_hyp[:] = 0.0

        # --- storage ---
        if post and (it - n_burn + 1) % thin == 0:
            out_theta[kept] = theta
            out_lgi[kept] = lgi
            out_mu[kept] = mu
            out_delta[kept] = delta
            out_la[kept] = la
            out_tau[kept] = tau
            out_hyp[kept] = hyp
            out_lt[kept] = log_target(theta, lgi, mu, delta, la, tau, hyp, logy, log1my,
                                      obs, C, pmean, pprec)
            kept += 1
    return kept
