"""Experiment-level prediction of the punishment-arm efficiency.

Records pair the control and treatment arms of one configuration. Features
are 13 design parameters plus the punishment flag and the control-arm
efficiency (14 base features). They are standardized with statistics from
the learning records, and then optionally expanded with all 91 distinct
pairwise products of the standardized columns. Efficiencies are in
percentage points.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from numba import njit

from .design_space import PggConfig
from .stats.bootstrap import bootstrap_rmse_ci
from .stats.cluster import encode_design
from .stats.regression import ols_fit

log = logging.getLogger(__name__)

# reward_impact is deliberately absent: it is not a model input
BASE_FEATURES = (
    "group_size",
    "game_length",
    "contribution_type",
    "contribution_framing",
    "mpcr",
    "communication",
    "peer_outcome_visibility",
    "actor_anonymity",
    "horizon_knowledge",
    "punishment_enabled",
    "peer_incentive_cost",
    "punishment_impact",
    "reward_enabled",
    "control_efficiency",
)
N_BASE = len(BASE_FEATURES)
INTERACTION_PAIRS = tuple(combinations(range(N_BASE), 2))

DEFAULT_ALPHAS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.05, 0.07, 0.1)
DEFAULT_L1_RATIOS = (0.0, 0.15, 0.3, 0.5, 0.7, 0.85, 1.0)


class ConvergenceError(RuntimeError):
    def __init__(self, message, intercept, coef, n_iter):
        super().__init__(message)
        self.intercept = intercept
        self.coef = coef
        self.n_iter = n_iter


class UnsupportedModelError(TypeError):
    pass


# ---------------------------------------------------------------------------
# Matched records
# ---------------------------------------------------------------------------


@dataclass
class ExperimentRecord:
    config: PggConfig
    control_efficiency: float
    treatment_efficiency: float
    n_control: int
    n_treatment: int
    wave: str = "learning"

    @property
    def config_id(self) -> str:
        return self.config.config_id

    @property
    def effect(self) -> float:
        return self.treatment_efficiency - self.control_efficiency


def _field(obj, name):
    return obj[name] if isinstance(obj, Mapping) else getattr(obj, name)


def build_matched_dataset(
    outcomes: Iterable,
    configs: Mapping[str, PggConfig],
    wave: Optional[str] = None,
) -> tuple[list[ExperimentRecord], dict[str, str]]:
    """Average included games per arm and pair arms by configuration.

    ``outcomes`` are game outcomes (objects or mappings) with ``config_id``,
    ``arm``, ``efficiency`` and ``included``. Returns the records, in
    ``configs`` order, and a mapping of dropped config ids to the reason.
    """
    arms: dict[str, dict[str, list[float]]] = {}
    for o in outcomes:
        if not _field(o, "included"):
            continue
        arms.setdefault(_field(o, "config_id"), {"control": [], "treatment": []})[
            _field(o, "arm")
        ].append(float(_field(o, "efficiency")))

    records: list[ExperimentRecord] = []
    dropped: dict[str, str] = {}
    for cid, cfg in configs.items():
        if wave is not None and cfg.wave != wave:
            continue
        games = arms.get(cid, {"control": [], "treatment": []})
        missing = [arm for arm in ("control", "treatment") if not games[arm]]
        if missing:
            dropped[cid] = "no included game in " + " and ".join(missing) + " arm"
            log.info("dropping %s: %s", cid, dropped[cid])
            continue
        records.append(
            ExperimentRecord(
                config=cfg,
                control_efficiency=100.0 * float(np.mean(games["control"])),
                treatment_efficiency=100.0 * float(np.mean(games["treatment"])),
                n_control=len(games["control"]),
                n_treatment=len(games["treatment"]),
                wave=cfg.wave,
            )
        )
    return records, dropped


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def base_matrix(records: Sequence[ExperimentRecord]) -> np.ndarray:
    """Raw (unstandardized) base features, one row per record."""
    X = np.empty((len(records), N_BASE))
    for i, rec in enumerate(records):
        for j, name in enumerate(BASE_FEATURES):
            if name == "control_efficiency":
                X[i, j] = rec.control_efficiency
            elif name == "punishment_enabled":
                # the modelled outcome is always the punishment arm
                X[i, j] = 1.0
            else:
                X[i, j] = encode_design(rec.config, name)
    return X


def feature_names(with_interactions: bool) -> list[str]:
    names = list(BASE_FEATURES)
    if with_interactions:
        names += [f"{BASE_FEATURES[a]}*{BASE_FEATURES[b]}" for a, b in INTERACTION_PAIRS]
    return names


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        for j in np.flatnonzero(sd == 0):
            name = BASE_FEATURES[j] if X.shape[1] == N_BASE else f"column {j}"
            warnings.warn(f"{name} is constant in the training data; it standardizes to 0")
        return cls(mean, sd)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        safe = np.where(self.sd > 0, self.sd, 1.0)
        Z = (X - self.mean) / safe
        Z[:, self.sd == 0] = 0.0
        return Z

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


def add_interactions(Z: np.ndarray) -> np.ndarray:
    a, b = np.array(INTERACTION_PAIRS).T
    return np.hstack([Z, Z[:, a] * Z[:, b]])


def featurize_matrix(raw: np.ndarray, standardizer: Standardizer, with_interactions: bool) -> np.ndarray:
    Z = standardizer.transform(raw)
    return add_interactions(Z) if with_interactions else Z


def featurize(
    records: Sequence[ExperimentRecord], standardizer: Standardizer, with_interactions: bool
) -> np.ndarray:
    return featurize_matrix(base_matrix(records), standardizer, with_interactions)


def target(records: Sequence[ExperimentRecord]) -> np.ndarray:
    return np.array([r.treatment_efficiency for r in records], dtype=float)


# ---------------------------------------------------------------------------
# Elastic net
# ---------------------------------------------------------------------------


@njit(cache=True)
def _enet_cd(X, y, alpha, l1_ratio, tol, max_iter, beta):
    n, p = X.shape
    x_mean = np.empty(p)
    for j in range(p):
        x_mean[j] = X[:, j].mean()
    y_mean = y.mean()
    Xc = X - x_mean
    col_sq = np.empty(p)
    for j in range(p):
        col_sq[j] = (Xc[:, j] ** 2).sum() / n
    r = (y - y_mean) - Xc @ beta
    l1_pen = alpha * l1_ratio
    l2_pen = alpha * (1.0 - l1_ratio)
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                beta[j] = 0.0
                continue
            old = beta[j]
            rho = 0.0
            for i in range(n):
                rho += Xc[i, j] * r[i]
            rho = rho / n + col_sq[j] * old
            if rho > l1_pen:
                new = (rho - l1_pen) / (col_sq[j] + l2_pen)
            elif rho < -l1_pen:
                new = (rho + l1_pen) / (col_sq[j] + l2_pen)
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(n):
                    r[i] -= Xc[i, j] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            return y_mean - x_mean @ beta, it, True
    return y_mean - x_mean @ beta, max_iter, False


@dataclass
class ElasticNetFit:
    intercept: float
    coef: np.ndarray
    n_iter: int
    alpha: float
    l1_ratio: float


def fit_elastic_net(
    X,
    y,
    alpha: float,
    l1_ratio: float,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    warm_start: Optional[np.ndarray] = None,
) -> ElasticNetFit:
    """Minimize (1/2n)|y - b - Xw|^2 + alpha*(l1_ratio*|w|_1 + (1-l1_ratio)/2*|w|_2^2).

    Cyclic coordinate descent with soft-thresholding; the intercept is not
    penalized. Stops when no coefficient moves by ``tol`` or more in a sweep.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if alpha < 0 or not 0.0 <= l1_ratio <= 1.0:
        raise ValueError("alpha must be >= 0 and l1_ratio in [0, 1]")
    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    intercept, n_iter, converged = _enet_cd(X, y, float(alpha), float(l1_ratio), tol, max_iter, beta)
    if not converged:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_iter} sweeps", intercept, beta, n_iter
        )
    return ElasticNetFit(float(intercept), beta, int(n_iter), float(alpha), float(l1_ratio))


def kkt_violation(X, y, fit: ElasticNetFit) -> float:
    """Largest violation of the elastic-net optimality conditions."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    r = np.asarray(y, dtype=float) - fit.intercept - X @ fit.coef
    grad = X.T @ r / n
    l1 = fit.alpha * fit.l1_ratio
    l2 = fit.alpha * (1.0 - fit.l1_ratio)
    viol = np.where(
        fit.coef == 0,
        np.maximum(np.abs(grad) - l1, 0.0),
        np.abs(grad - l2 * fit.coef - l1 * np.sign(fit.coef)),
    )
    return float(viol.max()) if viol.size else 0.0


@dataclass
class CVResult:
    alpha: float
    l1_ratio: float
    rmse: float
    table: list[dict] = field(default_factory=list)
    folds: list[np.ndarray] = field(default_factory=list, repr=False)


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if not 2 <= folds <= n:
        raise ValueError(f"folds must be between 2 and the number of rows ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cross_validate_grid(
    X,
    y,
    alpha_grid: Sequence[float] = DEFAULT_ALPHAS,
    l1_grid: Sequence[float] = DEFAULT_L1_RATIOS,
    folds: int = 10,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> CVResult:
    """Grid search scored by RMSE over out-of-fold predictions pooled across folds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    split = fold_indices(len(y), folds, seed)
    table = []
    best = None
    for l1 in l1_grid:
        # warm starts along descending alpha per fold; the optimum is unchanged
        warm = [None] * len(split)
        preds_by_alpha = {}
        for alpha in sorted(alpha_grid, reverse=True):
            pred = np.empty_like(y)
            for k, test_idx in enumerate(split):
                train = np.setdiff1d(np.arange(len(y)), test_idx)
                fit = fit_elastic_net(X[train], y[train], alpha, l1, tol, max_iter, warm[k])
                warm[k] = fit.coef.copy()
                pred[test_idx] = fit.intercept + X[test_idx] @ fit.coef
            preds_by_alpha[alpha] = float(np.sqrt(np.mean((y - pred) ** 2)))
        for alpha in alpha_grid:
            rmse = preds_by_alpha[alpha]
            table.append({"alpha": float(alpha), "l1_ratio": float(l1), "rmse": rmse})
            if best is None or rmse < best[2]:
                best = (float(alpha), float(l1), rmse)
    return CVResult(best[0], best[1], best[2], table, split)


# ---------------------------------------------------------------------------
# Fitted linear models
# ---------------------------------------------------------------------------


@dataclass
class LinearModel:
    kind: str  # "enet" or "ols"
    intercept: float
    coef: np.ndarray
    standardizer: Standardizer
    with_interactions: bool
    feature_means: np.ndarray
    learning_treatment_mean: float
    ate_learn: float
    params: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return feature_names(self.with_interactions)

    def design(self, records: Sequence[ExperimentRecord]) -> np.ndarray:
        return featurize(records, self.standardizer, self.with_interactions)

    def predict_matrix(self, F: np.ndarray) -> np.ndarray:
        return self.intercept + F @ self.coef

    def predict(self, records: Sequence[ExperimentRecord]) -> np.ndarray:
        return self.predict_matrix(self.design(records))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "feature_names": self.feature_names,
            "with_interactions": self.with_interactions,
            "standardizer": self.standardizer.to_dict() | {"features": list(BASE_FEATURES)},
            "feature_means": self.feature_means.tolist(),
            "learning_treatment_mean": self.learning_treatment_mean,
            "ate_learn": self.ate_learn,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d["standardizer"].get("features", list(BASE_FEATURES)) != list(BASE_FEATURES):
            raise ValueError("model was trained on a different feature set")
        model = cls(
            kind=d["kind"],
            intercept=float(d["intercept"]),
            coef=np.asarray(d["coef"], dtype=float),
            standardizer=Standardizer.from_dict(d["standardizer"]),
            with_interactions=bool(d["with_interactions"]),
            feature_means=np.asarray(d["feature_means"], dtype=float),
            learning_treatment_mean=float(d["learning_treatment_mean"]),
            ate_learn=float(d["ate_learn"]),
            params=dict(d.get("params", {})),
        )
        if d.get("feature_names", model.feature_names) != model.feature_names:
            raise ValueError("feature ordering in the model file does not match")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def learning_summary(records: Sequence[ExperimentRecord]) -> tuple[float, float]:
    """(mean treatment efficiency, unweighted mean per-record effect)."""
    if not records:
        raise ValueError("no learning records")
    t = target(records)
    c = np.array([r.control_efficiency for r in records])
    return float(t.mean()), float((t - c).mean())


def _prepare(records, with_interactions):
    raw = base_matrix(records)
    std = Standardizer.fit(raw)
    F = featurize_matrix(raw, std, with_interactions)
    return std, F, target(records)


def fit_enet_model(
    records: Sequence[ExperimentRecord],
    alpha: float,
    l1_ratio: float,
    with_interactions: bool = True,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> LinearModel:
    std, F, y = _prepare(records, with_interactions)
    fit = fit_elastic_net(F, y, alpha, l1_ratio, tol, max_iter)
    mean_t, ate = learning_summary(records)
    return LinearModel(
        "enet", fit.intercept, fit.coef, std, with_interactions, F.mean(axis=0), mean_t, ate,
        {"alpha": alpha, "l1_ratio": l1_ratio, "tol": tol, "n_iter": fit.n_iter},
    )


def fit_ols_model(records: Sequence[ExperimentRecord], with_interactions: bool = False) -> LinearModel:
    """OLS on the standardized features; columns constant in training get coefficient 0."""
    std, F, y = _prepare(records, with_interactions)
    keep = np.flatnonzero(F.std(axis=0) > 0)
    res = ols_fit(F[:, keep], y)
    coef = np.zeros(F.shape[1])
    coef[keep] = res.coef[1:]
    mean_t, ate = learning_summary(records)
    return LinearModel(
        "ols", float(res.coef[0]), coef, std, with_interactions, F.mean(axis=0), mean_t, ate,
        {"dropped_constant": [feature_names(with_interactions)[j] for j in range(F.shape[1]) if j not in set(keep)]},
    )


# ---------------------------------------------------------------------------
# Evaluation and interpretation
# ---------------------------------------------------------------------------


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def evaluate(predictions, truths, learning_treatment_mean: float) -> tuple[float, float]:
    """(RMSE, out-of-sample R^2 against the learning treatment mean)."""
    pred = np.asarray(predictions, dtype=float)
    truth = np.asarray(truths, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("predictions and truths differ in length")
    denom = float(((truth - learning_treatment_mean) ** 2).sum())
    r2 = 1.0 - float(((truth - pred) ** 2).sum()) / denom if denom > 0 else float("nan")
    return rmse(pred, truth), r2


def baseline_predictions(
    records: Sequence[ExperimentRecord], ate_learn: float, learning_treatment_mean: float
) -> dict[str, np.ndarray]:
    control = np.array([r.control_efficiency for r in records])
    return {
        "no_effect": control,
        "control_plus_ate": control + ate_learn,
        "learning_mean": np.full(len(records), learning_treatment_mean),
    }


def baselines(
    records: Sequence[ExperimentRecord], ate_learn: float, learning_treatment_mean: float
) -> dict[str, float]:
    y = target(records)
    return {k: rmse(v, y) for k, v in baseline_predictions(records, ate_learn, learning_treatment_mean).items()}


def permutation_importance(
    model: LinearModel,
    records: Sequence[ExperimentRecord],
    repeats: int = 30,
    seed: int = 0,
    level: float = 0.95,
) -> dict[str, dict]:
    """Error ratio after shuffling one raw base feature across records.

    Interactions involving the shuffled feature are rebuilt from the shuffled
    column with the model's learning-set standardizer.
    """
    raw = base_matrix(records)
    y = target(records)
    base_rmse = rmse(model.predict_matrix(featurize_matrix(raw, model.standardizer, model.with_interactions)), y)
    rng = np.random.default_rng(seed)
    lo_q, hi_q = 100 * (1 - level) / 2, 100 * (1 + level) / 2
    out = {}
    for j, name in enumerate(BASE_FEATURES):
        ratios = np.empty(repeats)
        for rep in range(repeats):
            shuffled = raw.copy()
            shuffled[:, j] = raw[rng.permutation(len(records)), j]
            F = featurize_matrix(shuffled, model.standardizer, model.with_interactions)
            ratios[rep] = rmse(model.predict_matrix(F), y) / base_rmse
        out[name] = {
            "ratio": float(ratios.mean()),
            "ci": [float(np.percentile(ratios, lo_q)), float(np.percentile(ratios, hi_q))],
            "ratios": ratios.tolist(),
        }
    return dict(sorted(out.items(), key=lambda kv: -kv[1]["ratio"]))


@dataclass
class ShapValues:
    base_value: float
    values: np.ndarray  # (n, n_features), one column per model feature
    by_base_feature: np.ndarray  # (n, 14), interactions split evenly between parents
    feature_names: list[str]


def linear_shap(model, F: np.ndarray, background: Optional[np.ndarray] = None) -> ShapValues:
    """Exact SHAP values of a linear model: coef * (x - background mean)."""
    if not isinstance(model, LinearModel):
        raise UnsupportedModelError("linear SHAP needs a fitted linear model")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    mu = model.feature_means if background is None else np.asarray(background, dtype=float)
    phi = model.coef * (F - mu)
    by_base = phi[:, :N_BASE].copy()
    if model.with_interactions:
        for k, (a, b) in enumerate(INTERACTION_PAIRS):
            half = phi[:, N_BASE + k] / 2.0
            by_base[:, a] += half
            by_base[:, b] += half
    base_value = float(model.intercept + model.coef @ mu)
    return ShapValues(base_value, phi, by_base, model.feature_names)


def prediction_report(
    model: LinearModel,
    records: Sequence[ExperimentRecord],
    seed: int,
    repeats: int = 30,
    resamples: int = 1000,
    extra_predictions: Optional[Mapping[str, np.ndarray]] = None,
) -> dict:
    """Score ``model`` on held-out records against the three baselines."""
    y = target(records)
    F = model.design(records)
    pred = model.predict_matrix(F)
    score, r2 = evaluate(pred, y, model.learning_treatment_mean)
    base_preds = baseline_predictions(records, model.ate_learn, model.learning_treatment_mean)
    errors = {"model": pred - y} | {k: v - y for k, v in base_preds.items()}
    for name, values in (extra_predictions or {}).items():
        errors[name] = np.asarray(values, dtype=float) - y
    ss = np.random.SeedSequence(seed)
    boot_seed, perm_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    boot = bootstrap_rmse_ci(errors, resamples=resamples, seed=boot_seed, baseline="no_effect")
    shap = linear_shap(model, F)
    return {
        "model_kind": model.kind,
        "n": len(records),
        "predictions": [
            {"config_id": r.config_id, "truth": float(t), "prediction": float(p)}
            for r, t, p in zip(records, y, pred)
        ],
        "rmse": score,
        "r2": r2,
        "baselines": {k: rmse(v, y) for k, v in base_preds.items()},
        "bootstrap": boot,
        "importance": permutation_importance(model, records, repeats, perm_seed),
        "shap": {
            "base_value": shap.base_value,
            "features": list(BASE_FEATURES),
            "rows": [
                {"config_id": r.config_id} | dict(zip(BASE_FEATURES, map(float, row)))
                for r, row in zip(records, shap.by_base_feature)
            ],
        },
    }
