"""Batch simulation and the wave-level analyses behind the command line."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .agents import assign_seats
from .design_space import PggConfig
from .engine import GameLog, GameSpec, run_game
from .io import derive_seed
from .metrics import GameOutcome, game_outcome
from .stats.cluster import cluster_features, kmeans
from .stats.ks import frt_max_p
from .stats.meta import SeUndefinedError, diff_means_effect, heterogeneity_report
from .stats.regression import ols_fit

log = logging.getLogger(__name__)

ARMS = ("control", "treatment")


@dataclass(frozen=True)
class GameJob:
    config: PggConfig
    arm: str
    trial: int
    master_seed: int
    dropout_rate: float = 0.0

    @property
    def unit(self) -> str:
        return f"{self.config.config_id}:{self.arm}:{self.trial}"

    @property
    def game_id(self) -> str:
        return f"{self.config.config_id}-{self.arm[0].upper()}{self.trial}"


def _run_job(job: GameJob, roster: dict) -> tuple[GameLog, GameOutcome]:
    cfg = job.config.with_punishment(job.arm == "treatment")
    setup = np.random.default_rng(derive_seed(job.master_seed, "setup", job.unit))
    seats = assign_seats(roster, cfg.group_size, setup)
    schedule = []
    if job.dropout_rate > 0:
        for pid in range(cfg.group_size):
            if setup.random() < job.dropout_rate:
                schedule.append((pid, int(setup.integers(1, cfg.game_length + 1))))
    spec = GameSpec(cfg, seats, schedule, derive_seed(job.master_seed, "game", job.unit), job.game_id)
    glog = run_game(spec)
    return glog, game_outcome(glog)


def _run_chunk(args):
    jobs, roster = args
    return [_run_job(j, roster) for j in jobs]


def simulate_batch(
    configs: Sequence[PggConfig],
    roster: dict,
    master_seed: int,
    trials: int = 1,
    dropout_rate: float = 0.0,
    workers: int = 1,
) -> tuple[list[GameLog], list[GameOutcome]]:
    """Play ``trials`` games per arm for every configuration.

    Each game's streams derive from (master seed, config id, arm, trial), so
    results do not depend on ``workers`` or scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0.0 <= dropout_rate <= 1.0:
        raise ValueError("dropout rate must be in [0, 1]")
    jobs = [
        GameJob(cfg, arm, t, master_seed, dropout_rate)
        for cfg in configs
        for arm in ARMS
        for t in range(trials)
    ]
    if workers <= 1:
        results = [_run_job(j, roster) for j in jobs]
    else:
        chunks = [(jobs[i::workers], roster) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        by_id = {g.game_id: (g, o) for part in parts for g, o in part}
        results = [by_id[j.game_id] for j in jobs]
    return [g for g, _ in results], [o for _, o in results]


# ---------------------------------------------------------------------------
# Heterogeneity
# ---------------------------------------------------------------------------


def _wave_outcomes(outcomes, configs, wave):
    rows = []
    for o in outcomes:
        cfg = configs.get(o.config_id)
        if cfg is None:
            raise KeyError(f"outcome {o.game_id} refers to unknown config {o.config_id}")
        if wave is not None and cfg.wave != wave:
            continue
        if not o.included or o.normalized_efficiency is None:
            continue
        rows.append(o)
    return rows


def assign_clusters(configs: Sequence[PggConfig], k: int, seed: int) -> dict[str, int]:
    ordered = sorted(configs, key=lambda c: c.config_id)
    res = kmeans(cluster_features(ordered), k, seed=seed)
    return {c.config_id: int(lab) for c, lab in zip(ordered, res.labels)}


def heterogeneity_analysis(
    outcomes,
    configs: dict[str, PggConfig],
    group_by: str = "experiment",
    wave: Optional[str] = None,
    clusters: int = 20,
    seed: int = 0,
    frt_scope: str = "pooled",
    grid_size: int = 300,
    permutations: int = 1000,
) -> dict:
    """Effect estimates per experiment or per k-means cluster, Cochran's Q,
    I^2 and the randomization test, on normalized efficiency."""
    rows = _wave_outcomes(outcomes, configs, wave)
    if group_by == "experiment":
        group_of = {cid: cid for cid in configs}
    elif group_by == "cluster":
        in_wave = [c for c in configs.values() if wave is None or c.wave == wave]
        group_of = {
            cid: f"cluster_{lab:02d}"
            for cid, lab in assign_clusters(in_wave, clusters, derive_seed(seed, "kmeans")).items()
        }
    else:
        raise ValueError(f"group_by must be 'experiment' or 'cluster', got {group_by!r}")

    groups: dict[str, dict[str, list[float]]] = {}
    for o in rows:
        groups.setdefault(group_of[o.config_id], {"control": [], "treatment": []})[o.arm].append(
            o.normalized_efficiency
        )
    estimates, skipped = [], {}
    for label in sorted(groups):
        arms = groups[label]
        try:
            estimates.append(diff_means_effect(arms["treatment"], arms["control"], label))
        except (SeUndefinedError, ValueError) as exc:
            skipped[label] = str(exc)

    frt = {}
    if frt_scope == "pooled":
        control = [o.normalized_efficiency for o in rows if o.arm == "control"]
        treatment = [o.normalized_efficiency for o in rows if o.arm == "treatment"]
        res = frt_max_p(control, treatment, grid_size, permutations, derive_seed(seed, "frt", "pooled"))
        frt = {"scope": "pooled", "max_p": res.max_p, "details": res.to_dict()}
        pooled_p = res.max_p
    elif frt_scope == "group":
        per_group = {}
        for e in estimates:
            arms = groups[e.label]
            res = frt_max_p(
                arms["control"], arms["treatment"], grid_size, permutations,
                derive_seed(seed, "frt", e.label),
            )
            per_group[e.label] = res.to_dict()
        pooled_p = min((d["max_p"] for d in per_group.values()), default=None)
        frt = {"scope": "group", "min_max_p": pooled_p, "groups": per_group}
    else:
        raise ValueError(f"frt scope must be 'pooled' or 'group', got {frt_scope!r}")

    report = heterogeneity_report(estimates, pooled_p)
    out = report.to_dict()
    out.update(
        {
            "group_by": group_by,
            "wave": wave,
            "n_games": len(rows),
            "skipped_groups": skipped,
            "frt": frt,
        }
    )
    if group_by == "cluster":
        out["clusters"] = clusters
        out["cluster_of"] = dict(sorted(group_of.items()))
    return out


def game_level_ols(outcomes, configs: dict[str, PggConfig], wave: Optional[str] = None) -> dict:
    """Normalized efficiency on a punishment indicator, one row per game."""
    rows = _wave_outcomes(outcomes, configs, wave)
    y = np.array([o.normalized_efficiency for o in rows])
    x = np.array([1.0 if o.arm == "treatment" else 0.0 for o in rows])
    res = ols_fit(x, y, names=["punishment"])
    return {"wave": wave, "n_games": len(rows)} | res.to_dict()


def outcome_summary(outcomes, configs: dict[str, PggConfig]) -> list[dict]:
    """Per wave and arm: game counts and mean efficiencies of included games."""
    cells: dict[tuple, list] = {}
    for o in outcomes:
        cells.setdefault((configs[o.config_id].wave, o.arm), []).append(o)
    table = []
    for (wave, arm), games in sorted(cells.items()):
        kept = [g for g in games if g.included]
        norm = [g.normalized_efficiency for g in kept if g.normalized_efficiency is not None]
        table.append(
            {
                "wave": wave,
                "arm": arm,
                "games": len(games),
                "included": len(kept),
                "mean_efficiency": float(np.mean([g.efficiency for g in kept])) if kept else None,
                "mean_normalized_efficiency": float(np.mean(norm)) if norm else None,
                "mean_contribution_fraction": (
                    float(np.mean([g.mean_contribution_fraction for g in kept])) if kept else None
                ),
            }
        )
    return table
