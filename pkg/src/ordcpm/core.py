"""Model core: outcome encoding, likelihood, induced cutpoint prior, and the
log posterior with analytic gradients.

Outcomes are treated as ordered categories, one per distinct value, so a
continuous outcome with no ties has as many categories as observations. The
cutpoints carry a prior induced from a symmetric Dirichlet on the at-origin
category probabilities, pushed through the link with the usual change of
variables. Sampling happens on an unconstrained vector (delta, beta) where
delta encodes the first cutpoint and the log gaps between the rest.

The hot path (log posterior plus gradient) is delegated to the kernel
backend selected in :mod:`ordcpm.kernel`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import kernel
from .links import LinkFamily, get_link

__all__ = [
    "OrdinalEncoding",
    "CpmData",
    "CpmParams",
    "UnconstrainedParams",
    "PriorSpec",
    "ALPHA_SCHEDULES",
    "encode_outcomes",
    "make_data",
    "alpha_schedule",
    "cell_prob",
    "cell_probs",
    "pointwise_log_likelihood",
    "log_likelihood",
    "dirichlet_log_density",
    "induced_prior_log_density",
    "to_unconstrained",
    "to_constrained",
    "log_posterior",
    "grad_log_posterior",
    "make_target",
]


@dataclass(frozen=True)
class OrdinalEncoding:
    """Ordered-category view of an outcome vector.

    ``ranks`` are 1-based positions of each observation in ``unique_values``.
    When a detection limit is present the tied lowest category is flagged as
    censored-below.
    """

    unique_values: np.ndarray
    ranks: np.ndarray
    detection_limit: float | None = None

    @property
    def n_categories(self) -> int:
        return int(self.unique_values.size)

    @property
    def censored(self) -> bool:
        return (
            self.detection_limit is not None
            and self.unique_values.size > 0
            and self.unique_values[0] == self.detection_limit
        )

    def __post_init__(self):
        uv = np.asarray(self.unique_values, dtype=float)
        r = np.asarray(self.ranks, dtype=np.int64)
        if uv.size and not np.all(np.diff(uv) > 0):
            raise ValueError("unique_values must be strictly increasing")
        if r.size and (r.min() < 1 or r.max() > uv.size):
            raise ValueError("ranks out of range")
        object.__setattr__(self, "unique_values", uv)
        object.__setattr__(self, "ranks", r)


def encode_outcomes(y, detection_limit=None) -> OrdinalEncoding:
    """Encode outcomes as ordered categories.

    Ties collapse into a single category. If ``detection_limit`` is given,
    every value below it is set to the limit first, so all sub-limit values
    land in category 1.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("outcome vector is empty")
    if not np.all(np.isfinite(y)):
        raise ValueError("outcome vector contains non-finite values")
    if detection_limit is not None:
        y = np.maximum(y, float(detection_limit))
    unique, inverse = np.unique(y, return_inverse=True)
    return OrdinalEncoding(unique, inverse.astype(np.int64) + 1, detection_limit)


@dataclass(frozen=True)
class CpmData:
    """Encoded outcome plus covariates, stored on the centered scale."""

    encoding: OrdinalEncoding
    X: np.ndarray
    covariate_means: np.ndarray
    column_names: tuple[str, ...]
    centered: bool = True

    @property
    def n(self) -> int:
        return int(self.encoding.ranks.size)

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    def center(self, x_raw):
        """Map a raw-scale covariate row onto the model's centered scale."""
        x_raw = np.atleast_1d(np.asarray(x_raw, dtype=float))
        if x_raw.shape[-1] != self.p:
            raise ValueError(f"expected {self.p} covariates, got {x_raw.shape[-1]}")
        return x_raw - self.covariate_means


def make_data(y, X=None, column_names=None, detection_limit=None, center=True) -> CpmData:
    """Build a CpmData from raw outcomes and a covariate matrix.

    Covariates are mean-centered by default; the means are stored so that
    conditional queries can be posed on the raw scale later.
    """
    encoding = encode_outcomes(y, detection_limit)
    n = encoding.ranks.size
    if X is None:
        X = np.empty((n, 0))
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[0] != n:
        if X.shape == (1, n):  # a single covariate passed as a flat vector
            X = X.T.copy()
        else:
            raise ValueError("X row count does not match outcome length")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariate matrix contains non-finite values")
    p = X.shape[1]
    if column_names is None:
        column_names = tuple(f"x{j + 1}" for j in range(p))
    else:
        column_names = tuple(column_names)
        if len(column_names) != p:
            raise ValueError("column_names length does not match covariate count")
    means = X.mean(axis=0) if (center and p) else np.zeros(p)
    return CpmData(encoding, np.ascontiguousarray(X - means), means, column_names, bool(center))


@dataclass(frozen=True)
class CpmParams:
    """Ordered cutpoints and regression coefficients."""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(b)):
            raise ValueError("parameters must be finite")
        if g.size > 1 and not np.all(np.diff(g) > 0):
            raise ValueError("cutpoints must be strictly increasing")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)

    @property
    def n_categories(self) -> int:
        return int(self.gamma.size) + 1


@dataclass(frozen=True)
class UnconstrainedParams:
    """Sampler-side parameterization: first cutpoint plus log gaps."""

    delta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.beta])

    @classmethod
    def from_vector(cls, u, n_cutpoints):
        u = np.asarray(u, dtype=float)
        return cls(u[:n_cutpoints], u[n_cutpoints:])


def to_unconstrained(params: CpmParams) -> UnconstrainedParams:
    gamma = params.gamma
    delta = np.empty_like(gamma)
    if gamma.size:
        delta[0] = gamma[0]
        delta[1:] = np.log(np.diff(gamma))
    return UnconstrainedParams(delta, params.beta.copy())


def to_constrained(u: UnconstrainedParams) -> CpmParams:
    delta = u.delta
    gamma = np.empty_like(delta)
    if delta.size:
        gamma[0] = delta[0]
        gamma[1:] = np.exp(delta[1:])
        np.cumsum(gamma, out=gamma)
    return CpmParams(gamma, u.beta.copy())


ALPHA_SCHEDULES = ("uniform", "jeffreys", "inverse_J", "recip_a", "recip_b")


def alpha_schedule(name: str, J: int) -> float:
    """Symmetric Dirichlet concentration as a function of the category count."""
    if J < 2:
        raise ValueError("alpha schedules need at least 2 categories")
    if name == "uniform":
        return 1.0
    if name == "jeffreys":
        return 0.5
    if name == "inverse_J":
        return 1.0 / J
    if name == "recip_a":
        return 1.0 / (2.0 + J / 3.0)
    if name == "recip_b":
        return 1.0 / (0.8 + 0.35 * J)
    raise ValueError(f"unknown alpha schedule {name!r}; expected one of {ALPHA_SCHEDULES}")


@dataclass(frozen=True)
class PriorSpec:
    """Prior configuration: Dirichlet concentration plus optional normal
    prior on the coefficients (flat when ``beta_sd`` is None)."""

    alpha: float | None = None
    schedule_name: str | None = None
    beta_sd: float | None = None

    def __post_init__(self):
        if self.alpha is None and self.schedule_name is None:
            raise ValueError("PriorSpec needs either alpha or schedule_name")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta_sd is not None and self.beta_sd <= 0:
            raise ValueError("beta_sd must be positive")

    def resolve_alpha(self, J: int) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return alpha_schedule(self.schedule_name, J)

    @property
    def beta_precision(self) -> float:
        return 0.0 if self.beta_sd is None else 1.0 / self.beta_sd**2


# -- likelihood --------------------------------------------------------------

_TINY_SWITCH = 1e-8
_LOG_FLOOR = np.log(1e-300)


def _log1mexp(z):
    """log(1 - exp(z)) for z < 0, stable at both ends."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(-np.expm1(z))  # z near 0
        large = np.log1p(-np.exp(z))  # z very negative
    return np.where(z > -0.693, small, large)


def _log_cdf_diff(link: LinkFamily, a, b, has_a, has_b):
    """log(G(a) - G(b)) with sentinels: missing a means G=1, missing b G=0.

    Differences are formed in probability space; entries whose difference is
    tiny (same far tail) are recomputed on the log scale to avoid
    cancellation. Returns (log_diff, diff).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    Ga = np.where(has_a, link._cdf(np.where(has_a, a, 0.0)), 1.0)
    Gb = np.where(has_b, link._cdf(np.where(has_b, b, 0.0)), 0.0)
    diff = Ga - Gb
    with np.errstate(divide="ignore"):
        out = np.log(np.maximum(diff, 1e-300))
    redo = diff < _TINY_SWITCH
    if np.any(redo):
        idx = np.nonzero(redo)
        out = np.array(out, copy=True)
        out[idx] = _log_cdf_diff_tail(link, a[idx], b[idx], np.broadcast_to(has_a, a.shape)[idx],
                                      np.broadcast_to(has_b, b.shape)[idx])
    return out, diff


def _log_cdf_diff_tail(link, a, b, has_a, has_b):
    out = np.full(a.shape, _LOG_FLOOR)
    only_b = ~has_a & has_b
    only_a = has_a & ~has_b
    both = has_a & has_b
    out[only_b] = link.log_sf(b[only_b])
    out[only_a] = link.log_cdf(a[only_a])
    if np.any(both):
        ab, bb = a[both], b[both]
        lower = ab <= 0.0
        la, lb = link.log_cdf(ab), link.log_cdf(bb)
        sa, sb = link.log_sf(ab), link.log_sf(bb)
        res = np.where(lower, la + _log1mexp(np.minimum(lb - la, -1e-300)),
                       sb + _log1mexp(np.minimum(sa - sb, -1e-300)))
        out[both] = res
    return np.maximum(out, _LOG_FLOOR)


def _obs_tail_args(params: CpmParams, encoding: OrdinalEncoding, eta):
    """Upper/lower latent arguments per observation, with validity masks."""
    gamma = params.gamma
    Jm1 = gamma.size
    r0 = encoding.ranks - 1  # 0-based category index
    has_a = r0 <= Jm1 - 1
    has_b = r0 >= 1
    a = gamma[np.minimum(r0, Jm1 - 1)] - eta
    b = gamma[np.maximum(r0 - 1, 0)] - eta
    return a, b, has_a, has_b


def pointwise_log_likelihood(params: CpmParams, data: CpmData, link) -> np.ndarray:
    """Per-observation log likelihood contributions."""
    link = get_link(link)
    _check_dims(params, data)
    eta = data.X @ params.beta if data.p else np.zeros(data.n)
    a, b, has_a, has_b = _obs_tail_args(params, data.encoding, eta)
    logpi, _ = _log_cdf_diff(link, a, b, has_a, has_b)
    return logpi


def log_likelihood(params: CpmParams, data: CpmData, link) -> float:
    """Sum of the per-observation log cell probabilities."""
    return float(np.sum(pointwise_log_likelihood(params, data, link)))


def cell_probs(params: CpmParams, link, x) -> np.ndarray:
    """All J category probabilities at a centered covariate row."""
    link = get_link(link)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eta = float(x @ params.beta) if params.beta.size else 0.0
    G = link._cdf(params.gamma - eta)
    full = np.concatenate([[0.0], G, [1.0]])
    return np.diff(full)


def cell_prob(params: CpmParams, link, x, j: int) -> float:
    """Probability of category ``j`` (1-based) at a centered covariate row."""
    J = params.n_categories
    if not 1 <= j <= J:
        raise ValueError(f"category index {j} outside 1..{J}")
    return float(cell_probs(params, link, x)[j - 1])


# -- prior -------------------------------------------------------------------


def dirichlet_log_density(pi, alpha: float) -> float:
    """Log density of a symmetric Dirichlet at a point on the open simplex."""
    pi = np.asarray(pi, dtype=float)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if np.any(pi <= 0):
        raise ValueError("pi must have strictly positive entries")
    if abs(pi.sum() - 1.0) > 1e-10:
        raise ValueError("pi must sum to 1")
    J = pi.size
    return float(gammaln(J * alpha) - J * gammaln(alpha) + (alpha - 1.0) * np.sum(np.log(pi)))


def induced_prior_log_density(gamma, link, alpha: float) -> float:
    """Log prior for the cutpoints induced by the symmetric Dirichlet.

    The Dirichlet is evaluated at the at-origin category probabilities
    h(gamma) and corrected by the change-of-variables term, whose log
    absolute determinant is the sum of log link densities at the cutpoints.
    """
    link = get_link(link)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size > 1 and not np.all(np.diff(gamma) > 0):
        raise ValueError("cutpoints must be strictly increasing")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    Jm1 = gamma.size
    J = Jm1 + 1
    a = np.concatenate([gamma, [0.0]])
    b = np.concatenate([[0.0], gamma])
    has_a = np.arange(J) < Jm1
    has_b = np.arange(J) >= 1
    log_pi, _ = _log_cdf_diff(link, a, b, has_a, has_b)
    const = gammaln(J * alpha) - J * gammaln(alpha)
    return float(const + (alpha - 1.0) * log_pi.sum() + link.log_pdf(gamma).sum())


# -- posterior ---------------------------------------------------------------


def _check_dims(params, data: CpmData):
    J = data.encoding.n_categories
    n_cut = params.gamma.size if isinstance(params, CpmParams) else params.delta.size
    if n_cut != J - 1:
        raise ValueError(f"expected {J - 1} cutpoints for {J} categories, got {n_cut}")
    if params.beta.size != data.p:
        raise ValueError(f"expected {data.p} coefficients, got {params.beta.size}")


def make_target(data: CpmData, link, prior: PriorSpec):
    """Closure evaluating the unconstrained log posterior and its gradient.

    The returned callable maps a flat vector (delta, beta) to
    ``(logpost, grad)`` and never raises on numerical overflow; it reports
    ``-inf`` instead so samplers can reject.
    """
    link = get_link(link)
    J = data.encoding.n_categories
    if J < 2:
        raise ValueError("need at least 2 distinct outcome categories")
    ranks0 = np.ascontiguousarray(data.encoding.ranks - 1, dtype=np.int64)
    X = np.ascontiguousarray(data.X, dtype=np.float64)
    alpha = prior.resolve_alpha(J)
    beta_prec = prior.beta_precision
    link_id = link.link_id
    n_cut = J - 1
    logpost_and_grad = kernel.logpost_and_grad

    def target(u: np.ndarray):
        if u.dtype != np.float64 or not u.flags.c_contiguous:
            u = np.ascontiguousarray(u, dtype=np.float64)
        return logpost_and_grad(u[:n_cut], u[n_cut:], ranks0, X, alpha, link_id, beta_prec)

    target.dim = n_cut + data.p
    return target


def log_posterior(u: UnconstrainedParams, data: CpmData, link, prior: PriorSpec) -> float:
    """Unnormalized log posterior on the unconstrained scale.

    Includes the log-gap change-of-variables term so that densities over
    (delta, beta) integrate consistently.
    """
    _check_dims(u, data)
    value, _ = make_target(data, link, prior)(u.as_vector())
    return value


def grad_log_posterior(u: UnconstrainedParams, data: CpmData, link, prior: PriorSpec) -> np.ndarray:
    """Gradient of :func:`log_posterior` with respect to (delta, beta)."""
    _check_dims(u, data)
    _, grad = make_target(data, link, prior)(u.as_vector())
    return grad
