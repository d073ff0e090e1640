"""Nonparametric bootstrap of RMSE over a shared set of experiments."""

from __future__ import annotations

from itertools import combinations
from typing import Mapping, Optional

import numpy as np


def bootstrap_rmse_ci(
    errors: Mapping[str, np.ndarray],
    resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    baseline: Optional[str] = None,
) -> dict:
    """Percentile CIs for each model's RMSE and for pairwise RMSE differences.

    ``errors`` maps a model name to its per-experiment prediction errors; all
    models must be scored on the same experiments. The same resampled index
    set is used for every model within a resample. Differences are reported
    as ``rmse[a] - rmse[b]`` under the key ``"a - b"``.
    """
    names = list(errors)
    mat = np.vstack([np.asarray(errors[m], dtype=float) for m in names])
    n = mat.shape[1]
    if n == 0:
        raise ValueError("no experiments to resample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))
    sq = mat**2
    boot = np.sqrt(sq[:, idx].mean(axis=2))  # (models, resamples)
    lo_q, hi_q = 100 * (1 - level) / 2, 100 * (1 + level) / 2

    def ci(values):
        return [float(np.percentile(values, lo_q)), float(np.percentile(values, hi_q))]

    out = {
        "rmse": {m: float(np.sqrt(sq[i].mean())) for i, m in enumerate(names)},
        "rmse_ci": {m: ci(boot[i]) for i, m in enumerate(names)},
        "diff_ci": {},
    }
    for (i, a), (j, b) in combinations(enumerate(names), 2):
        out["diff_ci"][f"{a} - {b}"] = ci(boot[i] - boot[j])
    if baseline is not None:
        k = names.index(baseline)
        out["ratio_to_baseline_ci"] = {m: ci(boot[i] / boot[k]) for i, m in enumerate(names)}
    return out
