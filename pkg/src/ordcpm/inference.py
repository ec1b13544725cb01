"""Posterior functionals, convergence diagnostics, model comparison, and
posterior predictive checks.

All functions are pure transformations of retained draws. Conditional
queries accept covariate rows either already centered or on the raw scale
together with the stored covariate means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps
from scipy.special import logsumexp, ndtri

from .core import CpmData, OrdinalEncoding, _log_cdf_diff
from .links import get_link
from .sampler import PosteriorDraws

__all__ = [
    "ConditionalSummary",
    "LooResult",
    "Diagnostics",
    "conditional_cdf",
    "conditional_mean",
    "conditional_quantile",
    "estimate_transformation",
    "convergence_diagnostics",
    "pointwise_loglik",
    "psis_loo",
    "elpd_diff",
    "posterior_predictive_draws",
    "ppp_value",
]

PPC_STATISTICS = ("variance", "skewness", "proportion_censored")


@dataclass
class ConditionalSummary:
    """Per-draw values of a posterior functional plus point and interval
    summaries. ``values`` is the outcome grid for curve-valued targets
    (cdf, transformation) and empty for scalar ones."""

    target: str
    at_covariates: np.ndarray | None
    values: np.ndarray
    per_draw: np.ndarray
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def __post_init__(self):
        point = np.atleast_1d(np.asarray(self.point, dtype=float))
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if np.any(lower > point + 1e-12) or np.any(point > upper + 1e-12):
            raise ValueError("interval must bracket the point estimate")


@dataclass
class LooResult:
    """Expected log predictive density estimated by PSIS-LOO."""

    elpd: float
    se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray

    @property
    def n(self) -> int:
        return int(self.pointwise.size)


def _centered_row(x, p, covariate_means):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != p:
        raise ValueError(f"expected {p} covariate values, got {x.size}")
    if covariate_means is not None:
        x = x - np.asarray(covariate_means, dtype=float)
    return x


def _interval(per_draw, level, axis=0):
    tail = 100.0 * (1.0 - level) / 2.0
    lower = np.percentile(per_draw, tail, axis=axis)
    upper = np.percentile(per_draw, 100.0 - tail, axis=axis)
    return lower, upper


def _cdf_matrix(draws: PosteriorDraws, link, x_centered):
    """Per-draw step-CDF values at the unique outcome values: (S, J)."""
    link = get_link(link)
    gamma = draws.gamma
    eta = draws.beta @ x_centered if draws.beta.shape[1] else np.zeros(draws.n_draws)
    F = np.empty((draws.n_draws, gamma.shape[1] + 1))
    F[:, :-1] = link._cdf(gamma - eta[:, None])
    F[:, -1] = 1.0
    return F


def conditional_cdf(draws, link, x, encoding: OrdinalEncoding, level=0.95,
                    covariate_means=None) -> ConditionalSummary:
    """Posterior of the conditional CDF evaluated at each outcome value.

    The point estimate is the posterior mean curve; intervals are pointwise
    percentile bands.
    """
    x = _centered_row(x, draws.beta.shape[1], covariate_means)
    F = _cdf_matrix(draws, link, x)
    lower, upper = _interval(F, level)
    return ConditionalSummary("cdf", x, encoding.unique_values.copy(), F,
                              F.mean(axis=0), lower, upper, level)


def _outcome_values(encoding: OrdinalEncoding, censored_value):
    vals = encoding.unique_values.copy()
    if encoding.censored:
        if censored_value is None:
            raise ValueError(
                "encoding flags a censored lowest category; pass censored_value"
            )
        vals[0] = float(censored_value)
    return vals


def conditional_mean(draws, link, x, encoding: OrdinalEncoding, censored_value=None,
                     level=0.95, covariate_means=None) -> ConditionalSummary:
    """Posterior of the conditional mean; the censored category (if any)
    contributes at an assigned outcome value."""
    x = _centered_row(x, draws.beta.shape[1], covariate_means)
    vals = _outcome_values(encoding, censored_value)
    F = _cdf_matrix(draws, link, x)
    f = np.diff(F, axis=1, prepend=0.0)
    per_draw = f @ vals
    lower, upper = _interval(per_draw, level)
    return ConditionalSummary("mean", x, np.empty(0), per_draw,
                              float(np.median(per_draw)), float(lower), float(upper), level)


def conditional_quantile(draws, link, x, encoding: OrdinalEncoding, q, level=0.95,
                         covariate_means=None) -> ConditionalSummary:
    """Posterior of the q-th conditional quantile with within-step linear
    interpolation; at the lowest support point the value itself is used."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly inside (0, 1)")
    x = _centered_row(x, draws.beta.shape[1], covariate_means)
    F = _cdf_matrix(draws, link, x)
    per_draw = _interpolated_quantile(F, encoding.unique_values, q)
    lower, upper = _interval(per_draw, level)
    return ConditionalSummary("quantile", x, np.empty(0), per_draw,
                              float(np.median(per_draw)), float(lower), float(upper), level)


def _interpolated_quantile(F, y, q):
    j = (F < q).sum(axis=1)  # first index with F >= q
    j = np.minimum(j, F.shape[1] - 1)
    out = np.where(j == 0, y[0], 0.0)
    inner = j > 0
    if np.any(inner):
        ji = j[inner]
        Fj = F[inner, ji]
        Fjm = F[inner, ji - 1]
        frac = (q - Fjm) / (Fj - Fjm)
        out[inner] = y[ji - 1] + frac * (y[ji] - y[ji - 1])
    return out


def estimate_transformation(draws: PosteriorDraws, encoding: OrdinalEncoding,
                            level=0.95) -> ConditionalSummary:
    """Median cutpoint against each outcome value: the latent-scale
    transformation implied by the fit."""
    gamma = draws.gamma
    lower, upper = _interval(gamma, level)
    return ConditionalSummary("transformation", None, encoding.unique_values[:-1].copy(),
                              gamma, np.median(gamma, axis=0), lower, upper, level)


# -- convergence diagnostics ---------------------------------------------------


@dataclass
class Diagnostics:
    param_names: tuple[str, ...]
    rhat: np.ndarray
    ess_bulk: np.ndarray
    n_divergent: int
    undefined: tuple[str, ...]

    def max_rhat(self) -> float:
        vals = self.rhat[np.isfinite(self.rhat)]
        return float(vals.max()) if vals.size else float("nan")

    def min_ess(self) -> float:
        vals = self.ess_bulk[np.isfinite(self.ess_bulk)]
        return float(vals.min()) if vals.size else float("nan")


def _split_chains(x):
    c, n = x.shape
    half = n // 2
    return np.vstack([x[:, :half], x[:, n - half:]])


def _split_rhat(x):
    """Split R-hat for one parameter; x has shape (chains, draws)."""
    x = _split_chains(x)
    m, n = x.shape
    if n < 2:
        return np.nan
    chain_mean = x.mean(axis=1)
    chain_var = x.var(axis=1, ddof=1)
    w = chain_var.mean()
    if w == 0 or not np.isfinite(w):
        return np.nan
    b = n * chain_mean.var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocov(x):
    """Per-chain autocovariance via FFT; x has shape (m, n)."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n


def _ess_chains(x):
    """ESS of (m, n) chains per Geyer's initial monotone sequence."""
    m, n = x.shape
    if n < 4 or (np.max(x) - np.min(x)) < np.finfo(float).resolution:
        return np.nan
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus == 0:
        return np.nan

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and (rho_even + rho_odd) > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if (rho_even + rho_odd) >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # enforce monotone decrease of paired sums
    for t in range(1, max_t - 1, 2):
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 2])
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def _rank_normalize(x):
    ranks = sps.rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 3.0 / 8.0) / (x.size + 0.25))


def convergence_diagnostics(draws: PosteriorDraws) -> Diagnostics:
    """Split R-hat and bulk ESS per parameter.

    Parameters that are exactly constant are reported as undefined (NaN)
    rather than trivially converged.
    """
    by_chain = draws.by_chain()
    c, n, d = by_chain.shape
    if c < 2 and n < 4:
        raise ValueError("need at least 2 chains or enough draws to split")
    rhat = np.empty(d)
    ess = np.empty(d)
    undefined = []
    for k in range(d):
        x = by_chain[:, :, k]
        if np.all(x == x.flat[0]):
            rhat[k] = np.nan
            ess[k] = np.nan
            undefined.append(draws.param_names[k])
            continue
        rhat[k] = _split_rhat(x)
        ess[k] = _ess_chains(_rank_normalize(_split_chains(x)))
        if not np.isfinite(rhat[k]):
            undefined.append(draws.param_names[k])
    div = draws.stats.get("divergent")
    n_div = int(np.sum(div)) if div is not None else 0
    return Diagnostics(draws.param_names, rhat, ess, n_div, tuple(undefined))


# -- model comparison ----------------------------------------------------------


def pointwise_loglik(draws: PosteriorDraws, data: CpmData, link) -> np.ndarray:
    """Log likelihood of each observation at each draw: (S, n)."""
    link = get_link(link)
    if draws.n_cutpoints != data.encoding.n_categories - 1:
        raise ValueError("draws and data disagree on the category count")
    if draws.beta.shape[1] != data.p:
        raise ValueError("draws and data disagree on the covariate count")
    gamma = draws.gamma
    Jm1 = gamma.shape[1]
    eta = draws.beta @ data.X.T if data.p else np.zeros((draws.n_draws, data.n))
    r0 = data.encoding.ranks - 1
    has_a = r0 < Jm1
    has_b = r0 >= 1
    a = gamma[:, np.minimum(r0, Jm1 - 1)] - eta
    b = gamma[:, np.maximum(r0 - 1, 0)] - eta
    logpi, _ = _log_cdf_diff(link, a, b, has_a, has_b)
    return logpi


def _gpd_fit(x):
    """Generalized Pareto fit to sorted exceedances (Zhang & Stephens 2009)
    with the weak k prior used for PSIS."""
    n = x.size
    prior_bs = 3.0
    prior_k = 10.0
    m_est = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1) - 0.5))
    b /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.mean(np.log1p(-b[:, None] * x), axis=1)
    len_scale = n * (np.log(-b / k) - k - 1.0)
    weights = 1.0 / np.sum(np.exp(len_scale - len_scale[:, None]), axis=1)
    weights /= weights.sum()
    b_post = np.sum(b * weights)
    k_post = np.mean(np.log1p(-b_post * x))
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def _gpd_quantiles(p, k, sigma):
    if abs(k) < 1e-15:
        return sigma * (-np.log1p(-p))
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def _psis_smooth(log_ratios):
    """Smooth one observation's log importance ratios; returns the smoothed
    log weights (unnormalized) and the Pareto tail index."""
    s = log_ratios.size
    lw = log_ratios - log_ratios.max()
    tail_len = int(np.ceil(min(0.2 * s, 3.0 * math.sqrt(s))))
    if tail_len < 5:
        return lw, np.nan
    order = np.argsort(lw)
    tail_ids = order[-tail_len:]
    cutoff = lw[order[-tail_len - 1]]
    cutoff = max(cutoff, np.log(np.finfo(float).tiny))
    exceed = np.exp(lw[tail_ids]) - np.exp(cutoff)
    if np.allclose(exceed, 0.0):
        return lw, np.nan
    srt = np.argsort(exceed)
    k, sigma = _gpd_fit(exceed[srt])
    if not np.isfinite(k):
        return lw, np.nan
    p = (np.arange(1, tail_len + 1) - 0.5) / tail_len
    smoothed = np.log(_gpd_quantiles(p, k, sigma) + np.exp(cutoff))
    out = lw.copy()
    out[tail_ids[srt]] = smoothed
    out = np.minimum(out, 0.0)  # no weight above the pre-normalized max
    return out, float(k)


def psis_loo(loglik: np.ndarray) -> LooResult:
    """PSIS-LOO expected log predictive density from an (S, n) log
    likelihood matrix (Vehtari, Gelman & Gabry 2017)."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2:
        raise ValueError("loglik must be an (S, n) matrix")
    s, n = loglik.shape
    pointwise = np.empty(n)
    pareto_k = np.empty(n)
    for i in range(n):
        lw, k = _psis_smooth(-loglik[:, i])
        lw = lw - logsumexp(lw)
        pointwise[i] = logsumexp(lw + loglik[:, i])
        pareto_k[i] = k
    elpd = float(pointwise.sum())
    se = float(np.sqrt(n * np.var(pointwise)))
    return LooResult(elpd, se, pointwise, pareto_k)


def elpd_diff(a: LooResult, b: LooResult) -> tuple[float, float]:
    """Difference in ELPD (a minus b) with its pointwise standard error."""
    if a.n != b.n:
        raise ValueError("LOO results cover different numbers of observations")
    d = a.pointwise - b.pointwise
    return float(d.sum()), float(np.sqrt(a.n * np.var(d)))


# -- posterior predictive checks ------------------------------------------------


def posterior_predictive_draws(draws: PosteriorDraws, data: CpmData, link, count: int,
                               seed: int = 0) -> np.ndarray:
    """Replicate outcome sets sampled from per-draw category probabilities.

    Returns a (count, n) array of replicate outcome values supported on the
    observed unique values; the ``count`` posterior draws are chosen without
    replacement, deterministically for a given seed.
    """
    link = get_link(link)
    if count > draws.n_draws:
        raise ValueError(f"count {count} exceeds available draws {draws.n_draws}")
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(0xB0A)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    chosen = np.sort(rng.choice(draws.n_draws, size=count, replace=False))
    y_vals = data.encoding.unique_values
    out = np.empty((count, data.n))
    eta = draws.beta @ data.X.T if data.p else np.zeros((draws.n_draws, data.n))
    for row, s in enumerate(chosen):
        F = np.empty((data.n, y_vals.size))
        F[:, :-1] = link._cdf(draws.gamma[s][None, :] - eta[s][:, None])
        F[:, -1] = 1.0
        u = rng.uniform(size=data.n)
        cat = (u[:, None] > F).sum(axis=1)
        out[row] = y_vals[cat]
    return out


def _skewness(v):
    v = np.asarray(v, dtype=float)
    m = v.mean()
    m2 = np.mean((v - m) ** 2)
    m3 = np.mean((v - m) ** 3)
    return m3 / m2**1.5 if m2 > 0 else 0.0


def ppp_value(statistic: str, replicates: np.ndarray, observed, encoding: OrdinalEncoding) -> float:
    """Posterior predictive p-value: fraction of replicate statistics at or
    above the observed one, counting ties as one half."""
    observed = np.asarray(observed, dtype=float)
    replicates = np.atleast_2d(np.asarray(replicates, dtype=float))
    if statistic == "variance":
        stat = lambda v: float(np.var(v, ddof=1))
    elif statistic == "skewness":
        stat = _skewness
    elif statistic == "proportion_censored":
        if not encoding.censored:
            raise ValueError("proportion_censored requires a censored encoding")
        limit = encoding.detection_limit
        stat = lambda v: float(np.mean(v <= limit))
    else:
        raise ValueError(f"unknown statistic {statistic!r}; expected one of {PPC_STATISTICS}")
    obs = stat(observed)
    rep = np.array([stat(r) for r in replicates])
    return float(np.mean(rep > obs) + 0.5 * np.mean(rep == obs))
