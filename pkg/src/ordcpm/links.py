"""Link families for cumulative probability models.

Each link pairs a latent error distribution with the inverse link G: the
standard logistic (logit), standard normal (probit), and standard Gumbel
(loglog). All functions are elementwise on arrays and safe deep into the
tails: CDF values are clamped into the open interval (0, 1) and log-scale
companions are provided so likelihood code can difference adjacent CDF
values without catastrophic cancellation.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["LinkFamily", "LINKS", "get_link", "cdf", "pdf", "quantile"]

# Smallest probability returned by cdf(); the ceiling is the largest double
# below 1 so that clamped values stay strictly inside (0, 1).
PROB_FLOOR = 1e-300
PROB_CEIL = float(np.nextafter(1.0, 0.0))

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _check_finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("link argument must be finite")
    return x


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    return p


def _clamp(p):
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


class LinkFamily:
    """One of the supported link families, identified by ``kind``.

    Public surface is cdf/pdf/quantile; log_cdf, log_sf, log_pdf and
    dlog_pdf (derivative of log density) exist for the likelihood and
    gradient code and skip the argument checks.
    """

    kinds = ("logit", "probit", "loglog")

    def __init__(self, kind: str):
        if kind not in self.kinds:
            raise ValueError(f"unknown link {kind!r}; expected one of {self.kinds}")
        self.kind = kind
        self._id = self.kinds.index(kind)

    def __repr__(self):
        return f"LinkFamily({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, LinkFamily) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    @property
    def link_id(self) -> int:
        """Integer code shared with the compiled kernel (0/1/2)."""
        return self._id

    # -- public, argument-checked surface ---------------------------------

    def cdf(self, x):
        """G(x), clamped into the open interval (0, 1)."""
        x = _check_finite(x)
        return _clamp(self._cdf(x))[()]

    def pdf(self, x):
        """Density g(x) = G'(x), nonnegative."""
        x = _check_finite(x)
        return self._pdf(x)[()]

    def quantile(self, p):
        """Inverse CDF; p must lie strictly inside (0, 1)."""
        p = _check_prob(p)
        return self._quantile(p)[()]

    # -- unchecked internals, vectorized ----------------------------------

    def _cdf(self, x):
        if self.kind == "logit":
            return special.expit(x)
        if self.kind == "probit":
            return special.ndtr(x)
        # Gumbel: exp(-exp(-x)); cap the inner exponent to dodge overflow
        # warnings, the result underflows to 0 either way.
        return np.exp(-np.exp(np.minimum(-x, 709.0)))

    def _pdf(self, x):
        if self.kind == "logit":
            e = np.exp(-np.abs(x))
            return e / (1.0 + e) ** 2
        if self.kind == "probit":
            return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
        t = np.exp(np.minimum(-x, 709.0))
        return np.where(np.isinf(t), 0.0, t * np.exp(-t))

    def _quantile(self, p):
        if self.kind == "logit":
            return np.log(p) - np.log1p(-p)
        if self.kind == "probit":
            return special.ndtri(p)
        return -np.log(-np.log(p))

    def log_cdf(self, x):
        """log G(x), accurate in the lower tail."""
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            return -np.logaddexp(0.0, -x)
        if self.kind == "probit":
            return special.log_ndtr(x)
        return -np.exp(np.minimum(-x, 709.0))

    def log_sf(self, x):
        """log(1 - G(x)), accurate in the upper tail."""
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            return -np.logaddexp(0.0, x)
        if self.kind == "probit":
            return special.log_ndtr(-x)
        # 1 - exp(-t) with t = exp(-x); for tiny t this is t to first order.
        t = np.exp(np.minimum(-x, 709.0))
        with np.errstate(divide="ignore"):
            out = np.log(-np.expm1(-t))
        return np.where(t < 1e-12, np.where(t > 0, np.log(np.maximum(t, PROB_FLOOR)), -np.inf), out)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            return x - 2.0 * np.logaddexp(0.0, x)
        if self.kind == "probit":
            return -0.5 * x * x - _LOG_SQRT_2PI
        return -x - np.exp(np.minimum(-x, 709.0))

    def dlog_pdf(self, x):
        """d/dx log g(x), used by the prior-Jacobian gradient."""
        x = np.asarray(x, dtype=float)
        if self.kind == "logit":
            return 1.0 - 2.0 * special.expit(x)
        if self.kind == "probit":
            return -x
        return -1.0 + np.exp(np.minimum(-x, 709.0))


LINKS = {kind: LinkFamily(kind) for kind in LinkFamily.kinds}


def get_link(kind) -> LinkFamily:
    """Return the shared LinkFamily instance for ``kind`` (str or instance)."""
    if isinstance(kind, LinkFamily):
        return kind
    try:
        return LINKS[kind]
    except KeyError:
        raise ValueError(f"unknown link {kind!r}; expected one of {LinkFamily.kinds}") from None


def cdf(link, x):
    return get_link(link).cdf(x)


def pdf(link, x):
    return get_link(link).pdf(x)


def quantile(link, p):
    return get_link(link).quantile(p)
