"""k-means (Lloyd iterations, k-means++ seeding) for grouping design points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..design_space import DEFAULT_BOUNDS, ParameterBounds, PggConfig

CLUSTER_FEATURES = (
    "group_size",
    "game_length",
    "contribution_type",
    "contribution_framing",
    "mpcr",
    "communication",
    "peer_outcome_visibility",
    "actor_anonymity",
    "horizon_knowledge",
    "peer_incentive_cost",
    "punishment_impact",
    "reward_enabled",
)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def encode_design(cfg: PggConfig, name: str) -> float:
    """Numeric value of one design parameter (categoricals as 0/1 indicators)."""
    value = getattr(cfg, name)
    if name == "contribution_type":
        return float(value == "all_or_nothing")
    if name == "contribution_framing":
        return float(value == "opt_out")
    if name == "actor_anonymity":
        return float(value == "revealed")
    return float(value)


def cluster_features(
    configs: Sequence[PggConfig], bounds: ParameterBounds = DEFAULT_BOUNDS
) -> np.ndarray:
    """Feature matrix for clustering: integer-valued parameters min-max scaled
    to their design ranges, reward impact dropped, everything else as is."""
    rows = []
    for cfg in configs:
        row = []
        for name in CLUSTER_FEATURES:
            v = encode_design(cfg, name)
            if name in ("group_size", "game_length", "peer_incentive_cost", "punishment_impact"):
                lo, hi = getattr(bounds, name)
                v = (v - lo) / (hi - lo)
            row.append(v)
        rows.append(row)
    return np.asarray(rows, dtype=float).reshape(len(rows), len(CLUSTER_FEATURES))


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # remaining points coincide with chosen centres; pick any unused index
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _lloyd(x, centroids, max_iter, tol):
    history = []
    labels = None
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        new_centroids = centroids.copy()
        for j in range(centroids.shape[0]):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
        empty = [j for j in range(centroids.shape[0]) if not np.any(labels == j)]
        if empty:
            point_d2 = _sq_dists(x, new_centroids)[np.arange(len(x)), labels]
            for j in empty:
                far = int(np.argmax(point_d2))
                new_centroids[j] = x[far]
                point_d2[far] = -1.0
        shift = float(((new_centroids - centroids) ** 2).sum())
        centroids = new_centroids
        if shift <= tol and not empty:
            d2 = _sq_dists(x, centroids)
            labels = d2.argmin(axis=1)
            history.append(float(d2[np.arange(len(x)), labels].sum()))
            break
    return labels, centroids, history, it


def kmeans(
    points, k: int, seed: int = 0, n_init: int = 1, max_iter: int = 300, tol: float = 1e-10
) -> KMeansResult:
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be between 1 and the number of points ({n}), got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centroids = _kmeans_pp(x, k, rng)
        labels, centroids, history, n_iter = _lloyd(x, centroids, max_iter, tol)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centroids, inertia, n_iter, history)
    return best
