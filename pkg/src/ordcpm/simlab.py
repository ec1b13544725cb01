"""Simulation study harness: data generators with analytic truth, percent
bias aggregation, and a parallel study runner.

Three generating models are supported, each paired with the link that makes
the fit well specified: a log-normal outcome (probit), a log-logistic
outcome on a scale-1/3 latent (logit, which estimates rescaled parameters),
and an identity-transformation Gumbel outcome (loglog). Censored variants
floor the outcome at a detection threshold.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri, expit, logit

from .core import ALPHA_SCHEDULES, PriorSpec, make_data
from .fitting import fit_cpm
from .inference import conditional_mean, conditional_quantile
from .sampler import PosteriorDraws, SamplerConfig

__all__ = [
    "ScenarioSpec",
    "RescaleSpec",
    "BiasReport",
    "StudyConfig",
    "BETA_TRUE",
    "generate_scenario",
    "target_grid",
    "true_quantities",
    "rescale_draws",
    "percent_bias",
    "run_study",
    "QUANTITY_NAMES",
]

BETA_TRUE = (1.0, -0.5)
_EULER_GAMMA = float(np.euler_gamma)

_SCENARIO_LINK = {1: "probit", 2: "logit", 3: "loglog"}
_SCENARIO_THRESHOLD = {1: 1.0, 2: 1.0, 3: 0.0}
_SCENARIO_RESCALE = {1: 1.0, 2: 1.0 / 3.0, 3: 1.0}

_COVARIATE_POINTS = ((1.0, 0.0), (1.0, 1.0))


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell: generating model, size, censoring, prior."""

    id: int
    n: int
    censored: bool = False
    alpha_schedule: str = "inverse_J"
    reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise ValueError("scenario id must be 1, 2 or 3")
        if self.alpha_schedule not in ALPHA_SCHEDULES:
            raise ValueError(f"unknown alpha schedule {self.alpha_schedule!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    @property
    def link(self) -> str:
        return _SCENARIO_LINK[self.id]

    @property
    def threshold(self) -> float:
        return _SCENARIO_THRESHOLD[self.id]

    @property
    def rescale_factor(self) -> float:
        return _SCENARIO_RESCALE[self.id]


@dataclass(frozen=True)
class RescaleSpec:
    """Scale factor mapping fitted draws back to the generating scale."""

    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("scale factor must be positive")


def _data_rng(spec: ScenarioSpec, rep_index: int) -> np.random.Generator:
    # censoring is a post-processing step, so its flag stays out of the
    # entropy: censored and uncensored variants share the underlying data
    ss = np.random.SeedSequence(
        [int(spec.seed), spec.id, spec.n, ALPHA_SCHEDULES.index(spec.alpha_schedule), rep_index]
    )
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def _fit_seed(spec: ScenarioSpec, rep_index: int) -> int:
    ss = np.random.SeedSequence(
        [int(spec.seed), spec.id, spec.n, ALPHA_SCHEDULES.index(spec.alpha_schedule),
         int(spec.censored), rep_index, 1]
    )
    return int(ss.generate_state(1, np.uint64)[0])


def generate_scenario(spec: ScenarioSpec, rep_index: int = 0):
    """One simulated dataset (y, X), deterministic per (spec, rep_index)."""
    rng = _data_rng(spec, rep_index)
    n = spec.n
    x1 = (rng.random(n) < 0.5).astype(float)
    x2 = rng.standard_normal(n)
    if spec.id == 1:
        eps = rng.standard_normal(n)
    elif spec.id == 2:
        eps = rng.logistic(0.0, 1.0 / 3.0, n)
    else:
        eps = rng.gumbel(0.0, 1.0, n)
    lat = BETA_TRUE[0] * x1 + BETA_TRUE[1] * x2 + eps
    y = np.exp(lat) if spec.id in (1, 2) else lat
    if spec.censored:
        y = np.maximum(y, spec.threshold)
    return y, np.column_stack([x1, x2])


def target_grid(scenario_id: int) -> np.ndarray:
    """Five outcome values spanning the bulk of each generating model."""
    if scenario_id == 1:
        return np.exp(np.array([-1.0, -0.33, 0.5, 1.33, 2.0]))
    if scenario_id == 2:
        return np.exp(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]))
    if scenario_id == 3:
        return np.array([-0.3, 0.0, 0.5, 1.5, 2.5])
    raise ValueError("scenario id must be 1, 2 or 3")


def _mu(x):
    return BETA_TRUE[0] * x[0] + BETA_TRUE[1] * x[1]


def true_cdf(scenario_id: int, y, x) -> np.ndarray:
    """Generating-model conditional CDF at outcome values ``y``."""
    y = np.asarray(y, dtype=float)
    mu = _mu(x)
    if scenario_id == 1:
        with np.errstate(divide="ignore"):
            return np.where(y > 0, ndtr(np.log(np.maximum(y, 1e-300)) - mu), 0.0)
    if scenario_id == 2:
        with np.errstate(divide="ignore"):
            return np.where(y > 0, expit(3.0 * (np.log(np.maximum(y, 1e-300)) - mu)), 0.0)
    if scenario_id == 3:
        return np.exp(-np.exp(-(y - mu)))
    raise ValueError("scenario id must be 1, 2 or 3")


def true_mean(scenario_id: int, x) -> float:
    mu = _mu(x)
    if scenario_id == 1:
        return math.exp(mu + 0.5)
    if scenario_id == 2:
        s = 1.0 / 3.0
        return math.exp(mu) * math.pi * s / math.sin(math.pi * s)
    if scenario_id == 3:
        return mu + _EULER_GAMMA
    raise ValueError("scenario id must be 1, 2 or 3")


def true_quantile(scenario_id: int, q: float, x) -> float:
    mu = _mu(x)
    if scenario_id == 1:
        return math.exp(mu + float(ndtri(q)))
    if scenario_id == 2:
        return math.exp(mu + float(logit(q)) / 3.0)
    if scenario_id == 3:
        return mu - math.log(-math.log(q))
    raise ValueError("scenario id must be 1, 2 or 3")


def true_gamma(scenario_id: int, y) -> np.ndarray:
    """Latent-scale transformation of the generating model at ``y``."""
    y = np.asarray(y, dtype=float)
    if scenario_id in (1, 2):
        return np.log(y)
    return y


def true_quantities(spec: ScenarioSpec, x) -> dict:
    """All analytic truths used by the bias study at covariate point ``x``.

    Values whose truth is unavailable under censoring (quantiles or grid
    points below the threshold) are reported as None.
    """
    sid = spec.id
    grid = target_grid(sid)
    out = {
        "mean": true_mean(sid, x),
        "median": true_quantile(sid, 0.5, x),
        "q20": true_quantile(sid, 0.2, x),
        "cdf": true_cdf(sid, grid, x),
        "gamma": true_gamma(sid, grid),
        "grid": grid,
    }
    if spec.censored:
        th = spec.threshold
        out["median"] = out["median"] if out["median"] >= th else None
        out["q20"] = out["q20"] if out["q20"] >= th else None
        avail = grid >= th
        out["cdf"] = [v if ok else None for v, ok in zip(out["cdf"], avail)]
        out["gamma"] = [v if ok else None for v, ok in zip(out["gamma"], avail)]
    return out


def rescale_draws(draws: PosteriorDraws, a: float) -> PosteriorDraws:
    """Multiply cutpoint and coefficient draws by ``a`` (generating-model
    scale for a latent error of scale ``a``). Ordering is preserved."""
    if a <= 0:
        raise ValueError("scale factor must be positive")
    return PosteriorDraws(draws.draws * a, draws.chain_id.copy(), draws.param_names,
                          {k: v.copy() for k, v in draws.stats.items()},
                          draws.n_cutpoints, draws.seed)


def percent_bias(estimates, truth) -> float:
    """Average percent bias of estimates against a nonzero truth."""
    estimates = np.asarray(estimates, dtype=float)
    if truth == 0:
        raise ValueError("percent bias undefined at truth 0; report absolute bias")
    return float(100.0 * np.mean((estimates - truth) / truth))


# -- study runner --------------------------------------------------------------

QUANTITY_NAMES = (
    ["beta1", "beta2"]
    + [f"gamma_y{k}" for k in range(1, 6)]
    + [f"cdf_y{k}" for k in range(1, 6)]
    + [f"cdf_pm_y{k}" for k in range(1, 6)]
    + ["mean_x10", "mean_x11", "median_x10", "median_x11", "q20_x10", "q20_x11"]
)


@dataclass(frozen=True)
class StudyConfig:
    """Grid of simulation cells plus the MCMC geometry used for each fit."""

    scenarios: tuple = (1, 2, 3)
    sample_sizes: tuple = (25, 50, 100, 200, 400)
    alpha_schedules: tuple = ("inverse_J", "recip_a", "recip_b")
    censoring: tuple = (False, True)
    reps: int = 100
    seed: int = 0
    chains: int = 2
    warmup_iters: int = 2000
    sampling_iters: int = 2000
    max_tree_depth: int = 10
    target_accept: float = 0.8

    def cells(self):
        for sid in self.scenarios:
            for n in self.sample_sizes:
                for sched in self.alpha_schedules:
                    for cens in self.censoring:
                        yield ScenarioSpec(int(sid), int(n), bool(cens), sched,
                                           self.reps, self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        kw = {}
        for key in ("scenarios", "sample_sizes", "alpha_schedules", "censoring"):
            if key in d:
                kw[key] = tuple(d[key])
        for key in ("reps", "seed", "chains", "warmup_iters", "sampling_iters",
                    "max_tree_depth"):
            if key in d:
                kw[key] = int(d[key])
        if "target_accept" in d:
            kw["target_accept"] = float(d["target_accept"])
        unknown = set(d) - {"scenarios", "sample_sizes", "alpha_schedules", "censoring",
                            "reps", "seed", "chains", "warmup_iters", "sampling_iters",
                            "max_tree_depth", "target_accept"}
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**kw)


@dataclass
class BiasReport:
    """Aggregated bias for one cell: one entry per quantity."""

    spec: ScenarioSpec
    rep_count: int
    failed_reps: int
    rows: list = field(default_factory=list)  # dicts: quantity, truth, pct/abs bias, flag


def _gamma_index(unique_values, y):
    """1-based cutpoint index whose step covers ``y``; None when outside."""
    j = int(np.searchsorted(unique_values, y, side="right"))
    if 1 <= j <= unique_values.size - 1:
        return j
    return None


def estimate_quantities(fit, spec: ScenarioSpec) -> dict:
    """Point estimates of every study quantity from one fitted model.

    Posterior medians throughout, except the ``cdf_pm_*`` entries which are
    posterior means of the conditional CDF.
    """
    draws = fit.draws
    scaled = rescale_draws(draws, spec.rescale_factor) if spec.rescale_factor != 1.0 else draws
    grid = target_grid(spec.id)
    out = {}
    med = np.median(scaled.beta, axis=0)
    out["beta1"], out["beta2"] = float(med[0]), float(med[1])

    uv = fit.encoding.unique_values
    for k, y in enumerate(grid, start=1):
        j = _gamma_index(uv, y)
        out[f"gamma_y{k}"] = float(np.median(scaled.gamma[:, j - 1])) if j else None

    # conditional CDF at (1, 1) on the raw covariate scale
    x11 = fit.data.center(np.array([1.0, 1.0]))
    eta = draws.beta @ x11
    for k, y in enumerate(grid, start=1):
        j = _gamma_index(uv, y)
        if j is None:
            below = y < uv[0]
            vals = np.zeros(draws.n_draws) if below else np.ones(draws.n_draws)
            if spec.censored and below:
                out[f"cdf_y{k}"] = None
                out[f"cdf_pm_y{k}"] = None
                continue
        else:
            vals = fit.link._cdf(draws.gamma[:, j - 1] - eta)
        out[f"cdf_y{k}"] = float(np.median(vals))
        out[f"cdf_pm_y{k}"] = float(np.mean(vals))

    cval = spec.threshold if spec.censored else None
    for x, tag in zip(_COVARIATE_POINTS, ("x10", "x11")):
        xr = np.asarray(x)
        means = conditional_mean(draws, fit.link, xr, fit.encoding, censored_value=cval,
                                 covariate_means=fit.data.covariate_means)
        out[f"mean_{tag}"] = float(means.point)
        for q, name in ((0.5, "median"), (0.2, "q20")):
            summ = conditional_quantile(draws, fit.link, xr, fit.encoding, q,
                                        covariate_means=fit.data.covariate_means)
            out[f"{name}_{tag}"] = float(summ.point)
    return out


def run_rep(spec: ScenarioSpec, rep_index: int, mcmc: SamplerConfig) -> dict:
    """Generate one dataset, fit it, and extract study quantities."""
    y, X = generate_scenario(spec, rep_index)
    data = make_data(y, X, ("x1", "x2"),
                     detection_limit=spec.threshold if spec.censored else None)
    prior = PriorSpec(schedule_name=spec.alpha_schedule)
    cfg = SamplerConfig(chains=mcmc.chains, warmup_iters=mcmc.warmup_iters,
                        sampling_iters=mcmc.sampling_iters, seed=_fit_seed(spec, rep_index),
                        max_tree_depth=mcmc.max_tree_depth, target_accept=mcmc.target_accept)
    fit = fit_cpm(data, spec.link, prior, cfg)
    return estimate_quantities(fit, spec)


def _cell_key(spec: ScenarioSpec):
    return (spec.id, spec.n, int(spec.censored), spec.alpha_schedule)


def _worker(job):
    (sid, n, cens, sched, reps, seed), rep, mcmc_kw = job
    spec = ScenarioSpec(sid, n, cens, sched, reps, seed)
    try:
        est = run_rep(spec, rep, SamplerConfig(**mcmc_kw))
        return _cell_key(spec), rep, est, None
    except Exception as exc:  # failures are reported per rep, never dropped
        return _cell_key(spec), rep, None, f"{type(exc).__name__}: {exc}"


def _truth_map(spec: ScenarioSpec) -> dict:
    t10 = true_quantities(spec, (1.0, 0.0))
    t11 = true_quantities(spec, (1.0, 1.0))
    truths = {"beta1": BETA_TRUE[0], "beta2": BETA_TRUE[1]}
    for k in range(1, 6):
        truths[f"gamma_y{k}"] = t11["gamma"][k - 1]
        truths[f"cdf_y{k}"] = t11["cdf"][k - 1]
        truths[f"cdf_pm_y{k}"] = t11["cdf"][k - 1]
    for tag, t in (("x10", t10), ("x11", t11)):
        truths[f"mean_{tag}"] = t["mean"]
        truths[f"median_{tag}"] = t["median"]
        truths[f"q20_{tag}"] = t["q20"]
    return truths


def default_workers() -> int:
    env = os.environ.get("ORDCPM_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_study(study: StudyConfig, workers: int | None = None, progress=None):
    """Run every (cell, rep) job, in parallel when workers > 1.

    Returns ``(reports, estimate_rows)``: BiasReport per cell plus tidy
    per-rep estimate records for downstream analysis.
    """
    if workers is None:
        workers = default_workers()
    mcmc_kw = dict(chains=study.chains, warmup_iters=study.warmup_iters,
                   sampling_iters=study.sampling_iters, max_tree_depth=study.max_tree_depth,
                   target_accept=study.target_accept)
    specs = {_cell_key(spec): spec for spec in study.cells()}
    jobs = []
    for key, spec in specs.items():
        for rep in range(study.reps):
            jobs.append(((spec.id, spec.n, spec.censored, spec.alpha_schedule,
                          spec.reps, spec.seed), rep, mcmc_kw))

    results = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for out in pool.map(_worker, jobs, chunksize=1):
                results[(out[0], out[1])] = out
                if progress:
                    progress(len(results), len(jobs))
    else:
        for job in jobs:
            out = _worker(job)
            results[(out[0], out[1])] = out
            if progress:
                progress(len(results), len(jobs))

    reports = []
    estimate_rows = []
    for key in sorted(specs):
        spec = specs[key]
        truths = _truth_map(spec)
        per_quantity = {q: [] for q in QUANTITY_NAMES}
        failures = 0
        for rep in range(study.reps):
            _, _, est, err = results[(key, rep)]
            if err is not None:
                failures += 1
                estimate_rows.append({"scenario": spec.id, "n": spec.n,
                                      "censored": spec.censored,
                                      "alpha_schedule": spec.alpha_schedule, "rep": rep,
                                      "quantity": "__error__", "estimate": None,
                                      "truth": None, "note": err})
                continue
            for q in QUANTITY_NAMES:
                value = est.get(q)
                estimate_rows.append({"scenario": spec.id, "n": spec.n,
                                      "censored": spec.censored,
                                      "alpha_schedule": spec.alpha_schedule, "rep": rep,
                                      "quantity": q, "estimate": value,
                                      "truth": truths[q], "note": ""})
                if value is not None:
                    per_quantity[q].append(value)

        report = BiasReport(spec, rep_count=study.reps - failures, failed_reps=failures)
        for q in QUANTITY_NAMES:
            truth = truths[q]
            ests = per_quantity[q]
            row = {"quantity": q, "truth": truth, "avg_percent_bias": None,
                   "avg_abs_bias": None, "flag": ""}
            if truth is None:
                row["flag"] = "truth_unavailable_censored"
            elif not ests:
                row["flag"] = "no_successful_reps"
            elif truth == 0:
                row["avg_abs_bias"] = float(np.mean(np.asarray(ests) - truth))
                row["flag"] = "truth_zero_absolute_bias"
            else:
                row["avg_percent_bias"] = percent_bias(ests, truth)
            report.rows.append(row)
        reports.append(report)
    return reports, estimate_rows
