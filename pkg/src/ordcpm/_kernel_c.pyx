# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled evaluation of the unconstrained log posterior and gradient.

Mirror of ``_kernel_py.logpost_and_grad``; keep the two in sync. The per
observation work is a plain C loop, which is what makes sampling with many
categories affordable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, fabs, isfinite, INFINITY
from scipy.special.cython_special cimport ndtr, log_ndtr, gammaln

cnp.import_array()

BACKEND = "compiled"

cdef double _TINY = 1e-8
cdef double _LOG_FLOOR = -690.77552789821368  # log(1e-300)
cdef double _LOG_SQRT_2PI = 0.91893853320467274178
cdef double _LOG_2PI = 1.8378770664093454836

cdef int LOGIT = 0
cdef int PROBIT = 1
cdef int LOGLOG = 2


cdef inline double _cdf(int link, double x) noexcept nogil:
    cdef double e, t
    if link == LOGIT:
        if x >= 0.0:
            return 1.0 / (1.0 + exp(-x))
        e = exp(x)
        return e / (1.0 + e)
    elif link == PROBIT:
        return ndtr(x)
    else:
        t = -x
        if t > 709.0:
            t = 709.0
        return exp(-exp(t))


cdef inline double _pdf(int link, double x) noexcept nogil:
    cdef double e, t
    if link == LOGIT:
        e = exp(-fabs(x))
        return e / ((1.0 + e) * (1.0 + e))
    elif link == PROBIT:
        return exp(-0.5 * x * x - _LOG_SQRT_2PI)
    else:
        t = -x
        if t > 709.0:
            return 0.0
        t = exp(t)
        return t * exp(-t)


cdef inline double _log_cdf(int link, double x) noexcept nogil:
    cdef double t
    if link == LOGIT:
        if x >= 0.0:
            return -log1p(exp(-x))
        return x - log1p(exp(x))
    elif link == PROBIT:
        return log_ndtr(x)
    else:
        t = -x
        if t > 709.0:
            t = 709.0
        return -exp(t)


cdef inline double _log_sf(int link, double x) noexcept nogil:
    cdef double t
    if link == LOGIT:
        if x <= 0.0:
            return -log1p(exp(x))
        return -x - log1p(exp(-x))
    elif link == PROBIT:
        return log_ndtr(-x)
    else:
        t = -x
        if t > 709.0:
            return 0.0
        t = exp(t)
        if t < 1e-12:
            # 1 - exp(-t) = t to double precision here
            return -x
        return log(-expm1(-t))


cdef inline double _log_pdf(int link, double x) noexcept nogil:
    cdef double t
    if link == LOGIT:
        if x >= 0.0:
            return -x - 2.0 * log1p(exp(-x))
        return x - 2.0 * log1p(exp(x))
    elif link == PROBIT:
        return -0.5 * x * x - _LOG_SQRT_2PI
    else:
        t = -x
        if t > 709.0:
            t = 709.0
        return -x - exp(t)


cdef inline double _dlog_pdf(int link, double x) noexcept nogil:
    cdef double t
    if link == LOGIT:
        return 1.0 - 2.0 * _cdf(LOGIT, x)
    elif link == PROBIT:
        return -x
    else:
        t = -x
        if t > 709.0:
            t = 709.0
        return -1.0 + exp(t)


cdef inline double _log1mexp(double z) noexcept nogil:
    # log(1 - exp(z)) for z < 0
    if z > -0.693:
        return log(-expm1(z))
    return log1p(-exp(z))


cdef inline double _cell(int link, double a, double b, bint has_a, bint has_b,
                         double* ra, double* rb) noexcept nogil:
    """log cell probability for the interval (b, a]; writes g(a)/pi and
    g(b)/pi into ra/rb (0 when the corresponding bound is a sentinel)."""
    cdef double Ga, Gb, pi, logpi, la, lb, sa, sb, z
    Ga = _cdf(link, a) if has_a else 1.0
    Gb = _cdf(link, b) if has_b else 0.0
    pi = Ga - Gb
    if pi > _TINY:
        logpi = log(pi)
        ra[0] = _pdf(link, a) / pi if has_a else 0.0
        rb[0] = _pdf(link, b) / pi if has_b else 0.0
        return logpi
    # same-tail fallback on the log scale
    if has_a and not has_b:
        logpi = _log_cdf(link, a)
    elif has_b and not has_a:
        logpi = _log_sf(link, b)
    elif a <= 0.0:
        la = _log_cdf(link, a)
        lb = _log_cdf(link, b)
        z = lb - la
        if z > -1e-300:
            z = -1e-300
        logpi = la + _log1mexp(z)
    else:
        sa = _log_sf(link, a)
        sb = _log_sf(link, b)
        z = sa - sb
        if z > -1e-300:
            z = -1e-300
        logpi = sb + _log1mexp(z)
    if logpi < _LOG_FLOOR:
        logpi = _LOG_FLOOR
    ra[0] = exp(_log_pdf(link, a) - logpi) if has_a else 0.0
    rb[0] = exp(_log_pdf(link, b) - logpi) if has_b else 0.0
    return logpi


def logpost_and_grad(double[::1] delta, double[::1] beta, long[::1] ranks0,
                     double[:, ::1] X, double alpha, int link_id, double beta_prec):
    """Compiled twin of ``_kernel_py.logpost_and_grad``."""
    cdef Py_ssize_t Jm1 = delta.shape[0]
    cdef Py_ssize_t p = beta.shape[0]
    cdef Py_ssize_t n = ranks0.shape[0]
    cdef Py_ssize_t J = Jm1 + 1
    cdef Py_ssize_t i, j, k, r
    cdef double lp = 0.0
    cdef double eta, a, b, ra, rb, logpi, acc, gap
    cdef bint has_a, has_b
    cdef bint ok = True

    grad_arr = np.zeros(Jm1 + p)
    cdef double[::1] grad = grad_arr
    gamma_arr = np.empty(Jm1)
    cdef double[::1] gamma = gamma_arr
    ggamma_arr = np.zeros(Jm1)
    cdef double[::1] ggamma = ggamma_arr
    gbeta_arr = np.zeros(p)
    cdef double[::1] gbeta = gbeta_arr

    with nogil:
        acc = 0.0
        for j in range(Jm1):
            if j == 0:
                acc = delta[0]
            else:
                acc = acc + exp(delta[j])
            gamma[j] = acc
        if not isfinite(gamma[Jm1 - 1]):
            lp = -INFINITY

        if isfinite(lp):
            # likelihood
            for i in range(n):
                eta = 0.0
                for k in range(p):
                    eta += X[i, k] * beta[k]
                r = ranks0[i]
                has_a = r < Jm1
                has_b = r >= 1
                a = gamma[r] - eta if has_a else 0.0
                b = gamma[r - 1] - eta if has_b else 0.0
                logpi = _cell(link_id, a, b, has_a, has_b, &ra, &rb)
                lp += logpi
                if has_a:
                    ggamma[r] += ra
                if has_b:
                    ggamma[r - 1] -= rb
                for k in range(p):
                    gbeta[k] += X[i, k] * (rb - ra)

            # induced cutpoint prior
            lp += gammaln(J * alpha) - J * gammaln(alpha)
            for j in range(J):
                has_a = j < Jm1
                has_b = j >= 1
                a = gamma[j] if has_a else 0.0
                b = gamma[j - 1] if has_b else 0.0
                logpi = _cell(link_id, a, b, has_a, has_b, &ra, &rb)
                lp += (alpha - 1.0) * logpi
                if has_a:
                    ggamma[j] += (alpha - 1.0) * ra
                if has_b:
                    ggamma[j - 1] -= (alpha - 1.0) * rb
            for j in range(Jm1):
                lp += _log_pdf(link_id, gamma[j])
                ggamma[j] += _dlog_pdf(link_id, gamma[j])

            # log-gap volume term
            for j in range(1, Jm1):
                lp += delta[j]

            if beta_prec > 0.0:
                for k in range(p):
                    lp += 0.5 * (log(beta_prec) - _LOG_2PI) - 0.5 * beta_prec * beta[k] * beta[k]
                    gbeta[k] -= beta_prec * beta[k]

            # chain rule: suffix sums over cutpoint gradients
            acc = 0.0
            for j in range(Jm1 - 1, -1, -1):
                acc += ggamma[j]
                if j == 0:
                    grad[0] = acc
                else:
                    gap = exp(delta[j])
                    grad[j] = gap * acc + 1.0
            for k in range(p):
                grad[Jm1 + k] = gbeta[k]
            for j in range(Jm1 + p):
                if not isfinite(grad[j]):
                    ok = False
                    break

    if not (ok and isfinite(lp)):
        return -np.inf, np.zeros(Jm1 + p)
    return lp, grad_arr
