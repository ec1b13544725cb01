"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

A self-contained implementation of multinomial NUTS (Hoffman & Gelman 2014;
Betancourt 2017) with dual-averaging step-size tuning and diagonal
mass-matrix estimation over doubling warmup windows. Chains draw their
randomness from counter-based Philox streams keyed by (seed, chain), so
results are reproducible and chain order is irrelevant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CpmData, PriorSpec, UnconstrainedParams
from .links import get_link

__all__ = ["SamplerConfig", "PosteriorDraws", "nuts_sample", "initialize", "InitializationError"]

_DIVERGENCE_THRESHOLD = 1000.0


def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a >= b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


class InitializationError(RuntimeError):
    """Raised when no finite starting point can be found."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 2
    warmup_iters: int = 2000
    sampling_iters: int = 2000
    seed: int = 0
    max_tree_depth: int = 10
    target_accept: float = 0.8
    init_jitter: float = 0.1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup_iters < 1 or self.sampling_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be nonnegative")


@dataclass
class PosteriorDraws:
    """Retained posterior draws with per-draw sampler statistics.

    ``draws`` holds one row per retained draw on the reporting scale
    (constrained cutpoints and coefficients for model fits). ``stats`` maps
    names like step_size/tree_depth/divergent/accept_stat/energy to arrays
    aligned with the rows.
    """

    draws: np.ndarray
    chain_id: np.ndarray
    param_names: tuple[str, ...]
    stats: dict[str, np.ndarray] = field(default_factory=dict)
    n_cutpoints: int = 0
    seed: int = 0

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        self.chain_id = np.asarray(self.chain_id, dtype=np.int64)
        if self.draws.shape[0] != self.chain_id.shape[0]:
            raise ValueError("chain_id length must match draw count")
        if len(self.param_names) != self.draws.shape[1]:
            raise ValueError("param_names length must match draw width")
        if self.n_cutpoints > 1:
            g = self.gamma
            if not np.all(np.diff(g, axis=1) > 0):
                raise ValueError("stored cutpoint rows must be strictly increasing")

    @property
    def n_draws(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_id).size)

    @property
    def gamma(self) -> np.ndarray:
        return self.draws[:, : self.n_cutpoints]

    @property
    def beta(self) -> np.ndarray:
        return self.draws[:, self.n_cutpoints :]

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (chains, iterations, dim); chains must be equal length."""
        ids = np.unique(self.chain_id)
        per = [self.draws[self.chain_id == c] for c in ids]
        counts = {p.shape[0] for p in per}
        if len(counts) != 1:
            raise ValueError("chains have unequal lengths")
        return np.stack(per)

    def divergence_rate(self) -> float:
        d = self.stats.get("divergent")
        return float(np.mean(d)) if d is not None and d.size else 0.0


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(chain)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def initialize(data: CpmData, link, prior: PriorSpec, jitter: float = 0.1, seed=0) -> UnconstrainedParams:
    """Starting point: cutpoints at equal-probability quantiles, zero
    coefficients, plus uniform jitter of the given width on the
    unconstrained scale."""
    link = get_link(link)
    J = data.encoding.n_categories
    gamma = link.quantile(np.arange(1, J) / J)
    delta = np.empty(J - 1)
    delta[0] = gamma[0]
    if J > 2:
        delta[1:] = np.log(np.diff(gamma))
    u = np.concatenate([delta, np.zeros(data.p)])
    if jitter > 0:
        rng = seed if isinstance(seed, np.random.Generator) else _chain_rng(int(seed), 0)
        u = u + rng.uniform(-jitter / 2.0, jitter / 2.0, size=u.size)
    return UnconstrainedParams(u[: J - 1], u[J - 1 :])


# -- leapfrog and tree building ----------------------------------------------


def _kinetic(r, inv_mass):
    return 0.5 * float(np.dot(r, r * inv_mass))


def _leapfrog(target, q, r, grad, eps, inv_mass):
    r1 = r + 0.5 * eps * grad
    q1 = q + eps * (inv_mass * r1)
    lp1, grad1 = target(q1)
    r1 = r1 + 0.5 * eps * grad1
    return q1, r1, lp1, grad1


class _Tree:
    """A balanced subtree of the trajectory: endpoints, a sampled proposal,
    and the running quantities the no-U-turn criterion needs."""

    __slots__ = (
        "q_minus", "r_minus", "grad_minus", "q_plus", "r_plus", "grad_plus",
        "q_prop", "lp_prop", "grad_prop", "log_sum_w", "rho",
        "sum_accept", "n_leapfrog", "divergent", "turning",
    )

    @classmethod
    def leaf(cls, q, r, lp, grad):
        t = cls()
        t.q_minus = t.q_plus = t.q_prop = q
        t.r_minus = t.r_plus = t.rho = r
        t.grad_minus = t.grad_plus = t.grad_prop = grad
        t.lp_prop = lp
        return t


def _is_turning(inv_mass, rho, r_start, r_end):
    v = inv_mass * rho
    return np.dot(v, r_start) <= 0.0 or np.dot(v, r_end) <= 0.0


def _build_tree(target, rng, depth, q, r, grad, direction, eps, inv_mass, joint0):
    if depth == 0:
        q1, r1, lp1, grad1 = _leapfrog(target, q, r, grad, direction * eps, inv_mass)
        joint = lp1 - _kinetic(r1, inv_mass) if np.isfinite(lp1) else -np.inf
        leaf = _Tree.leaf(q1, r1, lp1, grad1)
        delta_h = joint - joint0
        leaf.divergent = not np.isfinite(joint) or delta_h < -_DIVERGENCE_THRESHOLD
        leaf.turning = False
        leaf.log_sum_w = joint if np.isfinite(joint) else -np.inf
        leaf.sum_accept = min(1.0, math.exp(min(0.0, delta_h)))
        leaf.n_leapfrog = 1
        return leaf

    inner = _build_tree(target, rng, depth - 1, q, r, grad, direction, eps, inv_mass, joint0)
    if inner.divergent or inner.turning:
        return inner
    if direction > 0:
        q2, r2, g2 = inner.q_plus, inner.r_plus, inner.grad_plus
    else:
        q2, r2, g2 = inner.q_minus, inner.r_minus, inner.grad_minus
    outer = _build_tree(target, rng, depth - 1, q2, r2, g2, direction, eps, inv_mass, joint0)

    inner.sum_accept += outer.sum_accept
    inner.n_leapfrog += outer.n_leapfrog
    if outer.divergent:
        inner.divergent = True
        return inner

    # multinomial sampling between the two halves
    total = _logaddexp(inner.log_sum_w, outer.log_sum_w)
    if math.log(rng.uniform()) < outer.log_sum_w - total:
        inner.q_prop, inner.lp_prop, inner.grad_prop = outer.q_prop, outer.lp_prop, outer.grad_prop
    inner.log_sum_w = total

    rho = inner.rho + outer.rho
    if direction > 0:
        r_start, r_end = inner.r_minus, outer.r_plus
        turning = (
            _is_turning(inv_mass, rho, r_start, r_end)
            or _is_turning(inv_mass, inner.rho + outer.r_minus, r_start, outer.r_minus)
            or _is_turning(inv_mass, inner.r_plus + outer.rho, inner.r_plus, r_end)
        )
        inner.q_plus, inner.r_plus, inner.grad_plus = outer.q_plus, outer.r_plus, outer.grad_plus
    else:
        r_start, r_end = outer.r_minus, inner.r_plus
        turning = (
            _is_turning(inv_mass, rho, r_start, r_end)
            or _is_turning(inv_mass, outer.rho + inner.r_minus, r_start, inner.r_minus)
            or _is_turning(inv_mass, outer.r_plus + inner.rho, outer.r_plus, r_end)
        )
        inner.q_minus, inner.r_minus, inner.grad_minus = outer.q_minus, outer.r_minus, outer.grad_minus
    inner.rho = rho
    inner.turning = turning
    return inner


def _nuts_transition(target, rng, q, lp, grad, eps, inv_mass, max_depth):
    d = q.size
    r0 = rng.standard_normal(d) / np.sqrt(inv_mass)
    joint0 = lp - _kinetic(r0, inv_mass)

    tree = _Tree.leaf(q, r0, lp, grad)
    tree.log_sum_w = joint0
    tree.sum_accept = 0.0
    tree.n_leapfrog = 0
    tree.divergent = False
    tree.turning = False

    depth = 0
    sum_accept = 0.0
    n_leapfrog = 0
    divergent = False
    while depth < max_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(target, rng, depth, tree.q_plus, tree.r_plus, tree.grad_plus,
                              direction, eps, inv_mass, joint0)
        else:
            sub = _build_tree(target, rng, depth, tree.q_minus, tree.r_minus, tree.grad_minus,
                              direction, eps, inv_mass, joint0)
        sum_accept += sub.sum_accept
        n_leapfrog += sub.n_leapfrog
        if sub.divergent:
            divergent = True
            break
        if sub.turning:
            break

        # biased progressive sampling toward the new half of the trajectory
        if math.log(rng.uniform()) < sub.log_sum_w - tree.log_sum_w:
            tree.q_prop, tree.lp_prop, tree.grad_prop = sub.q_prop, sub.lp_prop, sub.grad_prop
        tree.log_sum_w = _logaddexp(tree.log_sum_w, sub.log_sum_w)

        rho = tree.rho + sub.rho
        if direction > 0:
            turning = (
                _is_turning(inv_mass, rho, tree.r_minus, sub.r_plus)
                or _is_turning(inv_mass, tree.rho + sub.r_minus, tree.r_minus, sub.r_minus)
                or _is_turning(inv_mass, tree.r_plus + sub.rho, tree.r_plus, sub.r_plus)
            )
            tree.q_plus, tree.r_plus, tree.grad_plus = sub.q_plus, sub.r_plus, sub.grad_plus
        else:
            turning = (
                _is_turning(inv_mass, rho, sub.r_minus, tree.r_plus)
                or _is_turning(inv_mass, sub.rho + tree.r_minus, sub.r_minus, tree.r_minus)
                or _is_turning(inv_mass, sub.r_plus + tree.rho, sub.r_plus, tree.r_plus)
            )
            tree.q_minus, tree.r_minus, tree.grad_minus = sub.q_minus, sub.r_minus, sub.grad_minus
        tree.rho = rho
        depth += 1
        if turning:
            break

    accept_stat = sum_accept / max(n_leapfrog, 1)
    # potential energy of the selected draw; enough for trace diagnostics
    energy = -tree.lp_prop
    stats = {
        "tree_depth": depth,
        "n_leapfrog": n_leapfrog,
        "divergent": divergent,
        "accept_stat": accept_stat,
        "energy": energy,
    }
    return tree.q_prop, tree.lp_prop, tree.grad_prop, stats


def _find_initial_step(target, q, lp, grad, inv_mass, rng):
    """Crude bracketing of a step size with acceptance near 1/2."""
    eps = 1.0
    d = q.size
    r = rng.standard_normal(d) / np.sqrt(inv_mass)
    joint0 = lp - _kinetic(r, inv_mass)
    _, r1, lp1, _ = _leapfrog(target, q, r, grad, eps, inv_mass)
    joint1 = lp1 - _kinetic(r1, inv_mass) if np.isfinite(lp1) else -np.inf
    delta = joint1 - joint0
    direction = 1 if delta > math.log(0.5) else -1
    for _ in range(100):
        eps = eps * (2.0 if direction == 1 else 0.5)
        _, r1, lp1, _ = _leapfrog(target, q, r, grad, eps, inv_mass)
        joint1 = lp1 - _kinetic(r1, inv_mass) if np.isfinite(lp1) else -np.inf
        delta = joint1 - joint0
        if direction == 1 and not delta > math.log(0.5):
            break
        if direction == -1 and not delta < math.log(0.5):
            break
        if eps > 1e7 or eps < 1e-10:
            break
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size (Hoffman & Gelman 2014)."""

    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.count = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.log_eps = math.log(eps0)

    def update(self, accept_stat):
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_bar(self):
        return math.exp(self.log_eps_bar)


class _Welford:
    def __init__(self, d):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros(d)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        return self.m2 / max(self.n - 1, 1)


def _slow_window_ends(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive, 0-based) of the mass-estimation windows."""
    if warmup < init_buffer + term_buffer + base_window:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.10 * warmup)
        base_window = warmup - init_buffer - term_buffer
        if base_window <= 0:
            return [], warmup, warmup
    ends = []
    start = init_buffer
    size = base_window
    last = warmup - term_buffer
    while True:
        end = start + size
        if end + 2 * size > last:
            ends.append(last)
            break
        ends.append(end)
        start = end
        size *= 2
    return ends, init_buffer, last


def _resolve_init(init, dim, config, rng):
    if callable(init):
        return np.asarray(init(rng), dtype=float)
    if init is None:
        base = np.zeros(dim)
    else:
        base = np.asarray(init, dtype=float)
    if config.init_jitter > 0:
        base = base + rng.uniform(-config.init_jitter / 2.0, config.init_jitter / 2.0, size=dim)
    return base


def _run_chain(target, config, chain, dim, init):
    rng = _chain_rng(config.seed, chain)

    q = lp = grad = None
    for _ in range(100):
        q0 = _resolve_init(init, dim, config, rng)
        lp0, grad0 = target(q0)
        if np.isfinite(lp0) and np.all(np.isfinite(grad0)):
            q, lp, grad = q0, lp0, grad0
            break
    if q is None:
        raise InitializationError(
            f"chain {chain}: no finite log density after 100 jittered initialization attempts"
        )

    inv_mass = np.ones(dim)
    eps = _find_initial_step(target, q, lp, grad, inv_mass, rng)
    da = _DualAveraging(eps, config.target_accept)
    window_ends, win_start, win_stop = _slow_window_ends(config.warmup_iters)
    welford = _Welford(dim)
    next_window = 0

    for m in range(config.warmup_iters):
        q, lp, grad, stats = _nuts_transition(target, rng, q, lp, grad, da.eps, inv_mass,
                                              config.max_tree_depth)
        da.update(stats["accept_stat"])
        if win_start <= m < win_stop and window_ends:
            welford.add(q)
            if m + 1 == window_ends[next_window]:
                var = welford.variance()
                w = welford.n
                inv_mass = (w / (w + 5.0)) * var + 1e-3 * (5.0 / (w + 5.0))
                inv_mass = np.maximum(inv_mass, 1e-10)
                welford = _Welford(dim)
                next_window += 1
                eps = _find_initial_step(target, q, lp, grad, inv_mass, rng)
                da = _DualAveraging(eps, config.target_accept)

    eps = da.eps_bar
    rows = np.empty((config.sampling_iters, dim))
    stat_arrays = {
        "step_size": np.full(config.sampling_iters, eps),
        "tree_depth": np.empty(config.sampling_iters, dtype=np.int64),
        "n_leapfrog": np.empty(config.sampling_iters, dtype=np.int64),
        "divergent": np.zeros(config.sampling_iters, dtype=bool),
        "accept_stat": np.empty(config.sampling_iters),
        "energy": np.empty(config.sampling_iters),
    }
    for s in range(config.sampling_iters):
        q, lp, grad, stats = _nuts_transition(target, rng, q, lp, grad, eps, inv_mass,
                                              config.max_tree_depth)
        rows[s] = q
        stat_arrays["tree_depth"][s] = stats["tree_depth"]
        stat_arrays["n_leapfrog"][s] = stats["n_leapfrog"]
        stat_arrays["divergent"][s] = stats["divergent"]
        stat_arrays["accept_stat"][s] = stats["accept_stat"]
        stat_arrays["energy"][s] = stats["energy"]
    return rows, stat_arrays


def nuts_sample(target, config: SamplerConfig, *, dim=None, init=None, transform=None,
                param_names=None, n_cutpoints=0) -> PosteriorDraws:
    """Sample a log density with gradient using NUTS.

    ``target`` maps a point to ``(log density, gradient)``. ``init`` may be
    a base point (jittered per chain by ``config.init_jitter``), a callable
    receiving the chain's generator, or None for the origin. ``transform``
    optionally maps each retained unconstrained draw to the stored
    reporting-scale row. Warmup draws are discarded.
    """
    if dim is None:
        dim = getattr(target, "dim", None)
        if dim is None:
            raise ValueError("pass dim= or use a target with a .dim attribute")
    dim = int(dim)

    all_rows = []
    all_stats = []
    for chain in range(config.chains):
        rows, stats = _run_chain(target, config, chain, dim, init)
        all_rows.append(rows)
        all_stats.append(stats)

    raw = np.vstack(all_rows)
    if transform is not None:
        out = np.vstack([np.atleast_2d(transform(row)) for row in raw])
    else:
        out = raw
    chain_id = np.repeat(np.arange(config.chains), config.sampling_iters)
    stats = {k: np.concatenate([s[k] for s in all_stats]) for k in all_stats[0]}
    if param_names is None:
        param_names = tuple(f"u{i}" for i in range(out.shape[1]))
    return PosteriorDraws(out, chain_id, tuple(param_names), stats, n_cutpoints, config.seed)
