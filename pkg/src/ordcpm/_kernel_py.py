"""Pure-numpy evaluation of the unconstrained log posterior and gradient.

This is the fallback for the compiled kernel in ``_kernel_c``; both expose
the same ``logpost_and_grad`` signature and must agree to floating tolerance
(covered by the backend parity tests). Keep the math here in sync with the
Cython version.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .links import LinkFamily, LINKS

BACKEND = "python"

_TINY = 1e-8
_LOG_FLOOR = np.log(1e-300)
_LINKS_BY_ID = [LINKS[k] for k in LinkFamily.kinds]


def _log1mexp(z):
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(-np.expm1(z))
        large = np.log1p(-np.exp(z))
    return np.where(z > -0.693, small, large)


def _tail_terms(link, a, b, has_a, has_b):
    """(log pi, g(a)/pi, g(b)/pi) for cells whose probability underflowed
    the direct difference; everything runs on the log scale."""
    logpi = np.full(a.shape, _LOG_FLOOR)
    only_a = has_a & ~has_b
    only_b = has_b & ~has_a
    both = has_a & has_b
    if np.any(only_a):
        logpi[only_a] = link.log_cdf(a[only_a])
    if np.any(only_b):
        logpi[only_b] = link.log_sf(b[only_b])
    if np.any(both):
        ab, bb = a[both], b[both]
        la, lb = link.log_cdf(ab), link.log_cdf(bb)
        sa, sb = link.log_sf(ab), link.log_sf(bb)
        lower = ab <= 0.0
        logpi[both] = np.where(lower, la + _log1mexp(np.minimum(lb - la, -1e-300)),
                               sb + _log1mexp(np.minimum(sa - sb, -1e-300)))
    logpi = np.maximum(logpi, _LOG_FLOOR)
    ra = np.where(has_a, np.exp(link.log_pdf(a) - logpi), 0.0)
    rb = np.where(has_b, np.exp(link.log_pdf(b) - logpi), 0.0)
    return logpi, ra, rb


def _cell_terms(link, a, b, has_a, has_b):
    """log cell probability and pdf/probability ratios, elementwise."""
    Ga = np.where(has_a, link._cdf(a), 1.0)
    Gb = np.where(has_b, link._cdf(b), 0.0)
    ga = np.where(has_a, link._pdf(a), 0.0)
    gb = np.where(has_b, link._pdf(b), 0.0)
    pi = Ga - Gb
    ok = pi > _TINY
    safe = np.where(ok, pi, 1.0)
    logpi = np.log(safe)
    ra = ga / safe
    rb = gb / safe
    if not np.all(ok):
        idx = np.nonzero(~ok)[0]
        lp_t, ra_t, rb_t = _tail_terms(link, a[idx], b[idx], has_a[idx], has_b[idx])
        logpi[idx] = lp_t
        ra[idx] = ra_t
        rb[idx] = rb_t
    return logpi, ra, rb


def logpost_and_grad(delta, beta, ranks0, X, alpha, link_id, beta_prec):
    """Log posterior over (delta, beta) and its gradient.

    Parameters are the unconstrained cutpoint vector ``delta`` (first
    cutpoint, then log gaps), coefficients ``beta``, 0-based category
    indices ``ranks0``, centered covariates ``X``, Dirichlet concentration
    ``alpha``, a link id, and the coefficient prior precision (0 = flat).
    Returns ``(-inf, zeros)`` instead of raising on numeric overflow.
    """
    link = _LINKS_BY_ID[link_id]
    delta = np.asarray(delta, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Jm1 = delta.size
    p = beta.size
    n = ranks0.size
    grad0 = np.zeros(Jm1 + p)

    gamma = np.empty(Jm1)
    gamma[0] = delta[0]
    gaps = np.exp(delta[1:])
    gamma[1:] = gaps
    np.cumsum(gamma, out=gamma)
    if not np.all(np.isfinite(gamma)):
        return -np.inf, grad0

    # likelihood
    eta = X @ beta if p else np.zeros(n)
    r0 = np.asarray(ranks0)
    has_a = r0 < Jm1
    has_b = r0 >= 1
    a = gamma[np.minimum(r0, Jm1 - 1)] - eta
    b = gamma[np.maximum(r0 - 1, 0)] - eta
    logpi, ra, rb = _cell_terms(link, a, b, has_a, has_b)
    lp = logpi.sum()

    ggamma = np.zeros(Jm1)
    np.add.at(ggamma, r0[has_a], ra[has_a])
    np.add.at(ggamma, r0[has_b] - 1, -rb[has_b])
    gbeta = X.T @ (rb - ra) if p else np.zeros(0)

    # induced cutpoint prior: Dirichlet at the origin probabilities plus the
    # cutpoint-to-probability change of variables
    J = Jm1 + 1
    aP = np.concatenate([gamma, [0.0]])
    bP = np.concatenate([[0.0], gamma])
    hasA = np.arange(J) < Jm1
    hasB = np.arange(J) >= 1
    logpi0, raP, rbP = _cell_terms(link, aP, bP, hasA, hasB)
    lp += gammaln(J * alpha) - J * gammaln(alpha) + (alpha - 1.0) * logpi0.sum()
    lp += link.log_pdf(gamma).sum()
    ggamma += (alpha - 1.0) * (raP[:-1] - rbP[1:])
    ggamma += link.dlog_pdf(gamma)

    # log-gap volume term
    lp += delta[1:].sum()

    if beta_prec > 0.0 and p:
        lp += 0.5 * p * (np.log(beta_prec) - np.log(2.0 * np.pi)) - 0.5 * beta_prec * np.sum(beta**2)
        gbeta = gbeta - beta_prec * beta

    # chain rule from cutpoints to (first cutpoint, log gaps)
    suffix = np.cumsum(ggamma[::-1])[::-1]
    gdelta = np.empty(Jm1)
    gdelta[0] = suffix[0]
    if Jm1 > 1:
        gdelta[1:] = gaps * suffix[1:] + 1.0

    grad = np.concatenate([gdelta, gbeta])
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        return -np.inf, grad0
    return float(lp), grad
