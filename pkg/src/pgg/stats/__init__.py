"""Heterogeneity detection and supporting statistics."""

from .bootstrap import bootstrap_rmse_ci
from .cluster import KMeansResult, cluster_features, kmeans
from .ks import FrtResult, UndefinedTestError, frt_max_p, ks_two_sample
from .meta import (
    EffectEstimate,
    HeterogeneityReport,
    InfiniteWeightError,
    SeUndefinedError,
    cochran_q,
    diff_means_effect,
    heterogeneity_report,
    i_squared,
)
from .regression import OLSResult, SingularDesignError, ols_fit
from .special import chi_square_sf, gammaincc

__all__ = [
    "EffectEstimate",
    "FrtResult",
    "HeterogeneityReport",
    "InfiniteWeightError",
    "KMeansResult",
    "OLSResult",
    "SeUndefinedError",
    "SingularDesignError",
    "UndefinedTestError",
    "bootstrap_rmse_ci",
    "chi_square_sf",
    "cluster_features",
    "cochran_q",
    "diff_means_effect",
    "frt_max_p",
    "gammaincc",
    "heterogeneity_report",
    "i_squared",
    "kmeans",
    "ks_two_sample",
    "ols_fit",
]
