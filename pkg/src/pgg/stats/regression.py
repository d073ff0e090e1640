"""Ordinary least squares with classical standard errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class SingularDesignError(ValueError):
    pass


@dataclass
class OLSResult:
    coef: np.ndarray
    se: np.ndarray
    names: list[str]
    residuals: np.ndarray
    sigma2: float
    df_resid: int

    def to_dict(self) -> dict:
        return {
            name: {"coef": float(c), "se": float(s)}
            for name, c, s in zip(self.names, self.coef, self.se)
        } | {"sigma2": self.sigma2, "df_resid": self.df_resid, "n": int(self.residuals.size)}


def ols_fit(
    X, y, names: Optional[Sequence[str]] = None, add_intercept: bool = True
) -> OLSResult:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if add_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ["intercept"] + names
    n, p = X.shape
    if n < p:
        raise SingularDesignError(f"{n} rows cannot identify {p} coefficients")
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesignError("design matrix is rank deficient")
    q, r = np.linalg.qr(X)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    df = n - p
    sigma2 = float(resid @ resid / df) if df > 0 else float("nan")
    r_inv = np.linalg.inv(r)
    cov = sigma2 * (r_inv @ r_inv.T)
    return OLSResult(coef, np.sqrt(np.diag(cov)), names, resid, sigma2, df)
