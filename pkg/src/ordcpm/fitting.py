"""End-to-end model fitting and on-disk fit artifacts.

A fit directory holds exactly three files: ``draws.csv`` (one row per
retained draw: chain, sampler statistics, named cutpoint and coefficient
columns), ``summary.json`` (model configuration plus the encoded data, so
downstream commands never re-read the raw CSV), and ``diagnostics.json``
(split R-hat, bulk ESS, divergences). Writes are atomic and byte-stable for
a fixed seed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import CpmData, CpmParams, OrdinalEncoding, PriorSpec, make_target
from .inference import (
    Diagnostics,
    conditional_cdf,
    conditional_mean,
    conditional_quantile,
    convergence_diagnostics,
    estimate_transformation,
    pointwise_loglik,
    posterior_predictive_draws,
)
from .links import get_link
from .sampler import PosteriorDraws, SamplerConfig, initialize, nuts_sample

__all__ = ["CpmFit", "fit_cpm", "save_fit", "load_fit"]

DRAWS_FILE = "draws.csv"
SUMMARY_FILE = "summary.json"
DIAGNOSTICS_FILE = "diagnostics.json"

_STAT_COLUMNS = ("accept_stat", "step_size", "tree_depth", "n_leapfrog", "divergent", "energy")


@dataclass
class CpmFit:
    """A fitted model: retained draws plus everything needed to query them."""

    draws: PosteriorDraws
    data: CpmData
    link: "LinkFamily"
    prior: PriorSpec
    config: SamplerConfig
    alpha: float

    @property
    def encoding(self) -> OrdinalEncoding:
        return self.data.encoding

    def conditional_cdf(self, x_raw, level=0.95):
        return conditional_cdf(self.draws, self.link, x_raw, self.encoding, level,
                               covariate_means=self.data.covariate_means)

    def conditional_mean(self, x_raw, censored_value=None, level=0.95):
        return conditional_mean(self.draws, self.link, x_raw, self.encoding,
                                censored_value, level,
                                covariate_means=self.data.covariate_means)

    def conditional_quantile(self, x_raw, q, level=0.95):
        return conditional_quantile(self.draws, self.link, x_raw, self.encoding, q, level,
                                    covariate_means=self.data.covariate_means)

    def transformation(self, level=0.95):
        return estimate_transformation(self.draws, self.encoding, level)

    def diagnostics(self) -> Diagnostics:
        return convergence_diagnostics(self.draws)

    def pointwise_loglik(self):
        return pointwise_loglik(self.draws, self.data, self.link)

    def posterior_predictive(self, count, seed=0):
        return posterior_predictive_draws(self.draws, self.data, self.link, count, seed)


def fit_cpm(data: CpmData, link, prior: PriorSpec, config: SamplerConfig) -> CpmFit:
    """Fit the cumulative probability model by NUTS.

    Everything that touches the sampler depends on the outcome only through
    its ranks, so strictly increasing transformations of the outcome leave
    the draws bit-identical.
    """
    link = get_link(link)
    J = data.encoding.n_categories
    if J < 2:
        raise ValueError("need at least 2 distinct outcome categories")
    target = make_target(data, link, prior)
    n_cut = J - 1

    def init(rng):
        u = initialize(data, link, prior, config.init_jitter, rng)
        return u.as_vector()

    def constrain(u):
        gamma = np.empty(n_cut)
        gamma[0] = u[0]
        gamma[1:] = np.exp(u[1:n_cut])
        np.cumsum(gamma, out=gamma)
        return np.concatenate([gamma, u[n_cut:]])

    names = tuple(f"gamma_{j}" for j in range(1, J)) + tuple(
        f"beta_{c}" for c in data.column_names
    )
    draws = nuts_sample(target, config, dim=target.dim, init=init, transform=constrain,
                        param_names=names, n_cutpoints=n_cut)
    return CpmFit(draws, data, link, prior, config, prior.resolve_alpha(J))


def params_at(draws: PosteriorDraws, s: int) -> CpmParams:
    """The s-th retained draw as constrained parameters."""
    return CpmParams(draws.gamma[s], draws.beta[s])


# -- serialization -------------------------------------------------------------


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not np.isfinite(f) else f
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, payload):
    _atomic_write(path, json.dumps(_jsonable(payload), sort_keys=True, indent=1) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_fit(fit: CpmFit, outdir, diagnostics: Diagnostics | None = None) -> dict:
    """Write draws.csv, summary.json and diagnostics.json into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    draws = fit.draws
    if diagnostics is None:
        diagnostics = fit.diagnostics()

    header = ["chain", "draw"] + list(_STAT_COLUMNS) + list(draws.param_names)
    lines = [",".join(header)]
    draw_index = np.concatenate(
        [np.arange(np.sum(draws.chain_id == c)) for c in np.unique(draws.chain_id)]
    )
    for s in range(draws.n_draws):
        row = [str(int(draws.chain_id[s])), str(int(draw_index[s]))]
        row += [_fmt(draws.stats[k][s]) for k in _STAT_COLUMNS]
        row += [repr(float(v)) for v in draws.draws[s]]
        lines.append(",".join(row))
    _atomic_write(os.path.join(outdir, DRAWS_FILE), "\n".join(lines) + "\n")

    enc = fit.encoding
    summary = {
        "version": __version__,
        "model": {
            "link": fit.link.kind,
            "alpha": fit.alpha,
            "alpha_schedule": fit.prior.schedule_name,
            "beta_sd": fit.prior.beta_sd,
            "n": fit.data.n,
            "p": fit.data.p,
            "n_categories": enc.n_categories,
            "column_names": list(fit.data.column_names),
            "covariate_means": fit.data.covariate_means,
            "centered": fit.data.centered,
            "detection_limit": enc.detection_limit,
            "censored": enc.censored,
        },
        "sampler": {
            "chains": fit.config.chains,
            "warmup_iters": fit.config.warmup_iters,
            "sampling_iters": fit.config.sampling_iters,
            "seed": fit.config.seed,
            "max_tree_depth": fit.config.max_tree_depth,
            "target_accept": fit.config.target_accept,
            "init_jitter": fit.config.init_jitter,
        },
        "data": {
            "unique_values": enc.unique_values,
            "ranks": enc.ranks,
            "X_centered": fit.data.X,
        },
        "param_names": list(draws.param_names),
    }
    write_json(os.path.join(outdir, SUMMARY_FILE), summary)

    diag_payload = {
        "rhat": dict(zip(diagnostics.param_names, diagnostics.rhat)),
        "ess_bulk": dict(zip(diagnostics.param_names, diagnostics.ess_bulk)),
        "max_rhat": diagnostics.max_rhat(),
        "min_ess_bulk": diagnostics.min_ess(),
        "n_divergent": diagnostics.n_divergent,
        "divergence_rate": draws.divergence_rate(),
        "undefined_params": list(diagnostics.undefined),
    }
    write_json(os.path.join(outdir, DIAGNOSTICS_FILE), diag_payload)
    return diag_payload


def load_fit(fit_dir) -> CpmFit:
    """Rebuild a CpmFit from an artifact directory (raw data not needed)."""
    with open(os.path.join(fit_dir, SUMMARY_FILE)) as fh:
        summary = json.load(fh)
    model = summary["model"]
    enc = OrdinalEncoding(
        np.asarray(summary["data"]["unique_values"], dtype=float),
        np.asarray(summary["data"]["ranks"], dtype=np.int64),
        model["detection_limit"],
    )
    X = np.asarray(summary["data"]["X_centered"], dtype=float).reshape(model["n"], model["p"])
    data = CpmData(enc, np.ascontiguousarray(X),
                   np.asarray(model["covariate_means"], dtype=float),
                   tuple(model["column_names"]), model["centered"])
    prior = PriorSpec(alpha=model["alpha"], schedule_name=model["alpha_schedule"],
                      beta_sd=model["beta_sd"])
    cfg = SamplerConfig(**summary["sampler"])

    with open(os.path.join(fit_dir, DRAWS_FILE), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_meta = 2 + len(_STAT_COLUMNS)
    param_names = tuple(header[n_meta:])
    mat = np.array([[float(v) for v in row] for row in rows])
    chain_id = mat[:, 0].astype(np.int64)
    stats = {}
    for k, name in enumerate(_STAT_COLUMNS):
        col = mat[:, 2 + k]
        if name in ("tree_depth", "n_leapfrog"):
            stats[name] = col.astype(np.int64)
        elif name == "divergent":
            stats[name] = col.astype(bool)
        else:
            stats[name] = col
    draws = PosteriorDraws(mat[:, n_meta:], chain_id, param_names, stats,
                           n_cutpoints=enc.n_categories - 1, seed=cfg.seed)
    return CpmFit(draws, data, get_link(model["link"]), prior, cfg, model["alpha"])
