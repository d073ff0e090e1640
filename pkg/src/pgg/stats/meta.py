"""Difference-in-means effects and fixed-effect heterogeneity statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .special import chi_square_sf


class SeUndefinedError(ValueError):
    pass


class InfiniteWeightError(ValueError):
    pass


@dataclass
class EffectEstimate:
    T: float
    se: float
    n_treatment: int
    n_control: int
    label: str = ""

    @property
    def degenerate(self) -> bool:
        """Zero standard error: the estimate cannot be precision-weighted."""
        return self.se == 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CochranQ:
    Q: float
    df: int
    p: float
    weights: list[float]
    mean: float


@dataclass
class HeterogeneityReport:
    Q: float
    df: int
    p_q: float
    i_squared: float
    weights: list[float]
    meta_mean: float
    frt_max_p: Optional[float] = None
    estimates: list[EffectEstimate] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimates"] = [e.to_dict() for e in self.estimates]
        return out


def diff_means_effect(
    treatment: Sequence[float], control: Sequence[float], label: str = ""
) -> EffectEstimate:
    t = np.asarray(treatment, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.size == 0 or c.size == 0:
        raise ValueError("both arms need at least one observation")
    if t.size < 2 or c.size < 2:
        raise SeUndefinedError(
            f"standard error needs two trials per arm (got {t.size} treatment, {c.size} control)"
        )
    se = math.sqrt(t.var(ddof=1) / t.size + c.var(ddof=1) / c.size)
    return EffectEstimate(float(t.mean() - c.mean()), se, int(t.size), int(c.size), label)


def cochran_q(estimates: Sequence[EffectEstimate]) -> CochranQ:
    if len(estimates) < 2:
        raise ValueError("Cochran's Q needs at least two estimates")
    se = np.array([e.se for e in estimates], dtype=float)
    if np.any(se <= 0):
        bad = [e.label for e in estimates if e.se <= 0]
        raise InfiniteWeightError(f"zero standard error gives infinite weight: {bad}")
    t = np.array([e.T for e in estimates], dtype=float)
    w = 1.0 / se**2
    mean = float(np.sum(w * t) / np.sum(w))
    q = float(np.sum(w * (t - mean) ** 2))
    df = len(estimates) - 1
    return CochranQ(q, df, chi_square_sf(q, df), w.tolist(), mean)


def i_squared(q: float, n: int) -> float:
    """Share of between-estimate variation beyond sampling error, clamped at 0."""
    if n < 2:
        raise ValueError("I^2 needs at least two estimates")
    if q <= 0:
        return 0.0
    return max(0.0, (q - (n - 1)) / q)


def heterogeneity_report(
    estimates: Sequence[EffectEstimate], frt_max_p: Optional[float] = None
) -> HeterogeneityReport:
    cq = cochran_q(estimates)
    return HeterogeneityReport(
        Q=cq.Q,
        df=cq.df,
        p_q=cq.p,
        i_squared=i_squared(cq.Q, len(estimates)),
        weights=cq.weights,
        meta_mean=cq.mean,
        frt_max_p=frt_max_p,
        estimates=list(estimates),
    )
