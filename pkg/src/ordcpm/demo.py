"""Synthetic walkthrough data.

Generates a right-skewed biomarker-style outcome with a lower detection
limit for the README examples: n=216 subjects, variant "a" with roughly 3%
of values below the limit and variant "b" with roughly 39%. Values below
the limit are recorded as 0, the convention the detection-limit workflow
expects. Entirely simulated; resembles no real measurements.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_surrogate", "write_surrogate_csv", "COLUMNS"]

COLUMNS = ("biomarker", "bmi", "age", "male", "nonwhite", "smoker", "cd4", "cohort")

_VARIANTS = {
    # intercept, log-scale sd, detection limit (~3% and ~39% below limit)
    "a": (0.5, 0.65, 0.366),
    "b": (-0.1, 0.9, 0.577),
}


def make_surrogate(variant: str = "a", seed: int = 0, n: int = 216):
    """Simulate one dataset; returns (column name tuple, value matrix)."""
    if variant not in _VARIANTS:
        raise ValueError("variant must be 'a' or 'b'")
    icept, sd, limit = _VARIANTS[variant]
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [np.uint64(seed), np.uint64(ord(variant))], dtype=np.uint64)))
    bmi = rng.normal(27.0, 5.0, n)
    age = rng.normal(45.0, 10.0, n)
    male = (rng.random(n) < 0.7).astype(float)
    nonwhite = (rng.random(n) < 0.4).astype(float)
    smoker = (rng.random(n) < 0.3).astype(float)
    cd4 = rng.normal(500.0, 150.0, n)
    cohort = (rng.random(n) < 147.0 / 216.0).astype(float)
    lat = (
        icept
        + 0.035 * (bmi - 27.0)
        + 0.012 * (age - 45.0)
        - 0.2 * male
        + 0.05 * nonwhite
        + 0.1 * smoker
        - 0.0006 * (cd4 - 500.0)
        - 0.15 * cohort
        + sd * rng.standard_normal(n)
    )
    y = np.exp(lat)
    y = np.where(y < limit, 0.0, y)
    mat = np.column_stack([y, bmi, age, male, nonwhite, smoker, cd4, cohort])
    return COLUMNS, mat


def write_surrogate_csv(path, variant: str = "a", seed: int = 0, n: int = 216):
    """Write a surrogate dataset as CSV; returns the fraction below limit."""
    cols, mat = make_surrogate(variant, seed, n)
    lines = [",".join(cols)]
    for row in mat:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return float(np.mean(mat[:, 0] == 0.0))
