"""Group-level outcomes of a played game.

Earnings, real and hypothetical, are computed per round with that round's
active-player count and then summed, so dropout shrinks the benchmarks the
same way it shrinks the group.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .design_space import round_half_away
from .engine import ENDOWMENT, GameLog

MAX_MISSING_SHARE = Fraction(18, 100)


class UndefinedMeasureError(ValueError):
    pass


@dataclass
class GameOutcome:
    game_id: str
    config_id: str
    arm: str
    e_group: Fraction
    e_full_cooperation: Fraction
    e_full_defection: Fraction
    efficiency: float
    normalized_efficiency: Optional[float]
    mean_contribution_fraction: float
    included: bool


def group_earnings(log: GameLog) -> Fraction:
    return sum((r.total_net for r in log.rounds), Fraction(0))


def benchmark_earnings(log: GameLog) -> tuple[Fraction, Fraction]:
    """Earnings of hypothetical all-contribute and all-withhold groups."""
    m = log.config.multiplier
    full_coop = Fraction(0)
    full_defect = Fraction(0)
    for r in log.rounds:
        n = r.n_active
        full_coop += n * round_half_away(m * ENDOWMENT)
        full_defect += n * ENDOWMENT
    return full_coop, full_defect


def efficiency(log: GameLog) -> float:
    full_coop, _ = benchmark_earnings(log)
    if full_coop <= 0:
        raise UndefinedMeasureError("full-cooperation earnings must be positive")
    return float(group_earnings(log) / full_coop)


def normalized_efficiency_exact(log: GameLog) -> Fraction:
    full_coop, full_defect = benchmark_earnings(log)
    if full_coop == full_defect:
        raise UndefinedMeasureError(
            "normalized efficiency is undefined when full cooperation and full defection earn the same"
        )
    return (group_earnings(log) - full_defect) / (full_coop - full_defect)


def normalized_efficiency(log: GameLog) -> float:
    return float(normalized_efficiency_exact(log))


def mean_contribution_fraction(log: GameLog) -> float:
    values = [c for r in log.rounds for c in r.contributions.values()]
    if not values:
        return 0.0
    return sum(values) / (ENDOWMENT * len(values))


def inclusion_filter(
    log_or_started, intended_size: Optional[int] = None, *, any_time_dropout: bool = False
) -> bool:
    """Keep a game unless more than 18% of the intended players are missing.

    ``log_or_started`` is a :class:`GameLog` or a started-size integer. By
    default "missing" means not completing round 1; ``any_time_dropout``
    counts every dropout during the game instead.
    """
    if isinstance(log_or_started, GameLog):
        log = log_or_started
        intended = log.intended_size if intended_size is None else intended_size
        if any_time_dropout:
            present = intended - len(log.dropouts)
        else:
            present = log.started_size
    else:
        if intended_size is None:
            raise TypeError("intended_size is required with a started-size count")
        intended = intended_size
        present = int(log_or_started)
    missing = intended - present
    return Fraction(missing, intended) <= MAX_MISSING_SHARE


def game_outcome(log: GameLog, *, any_time_dropout: bool = False) -> GameOutcome:
    e_group = group_earnings(log)
    full_coop, full_defect = benchmark_earnings(log)
    try:
        norm = float(normalized_efficiency_exact(log))
    except UndefinedMeasureError:
        norm = None
    eff = float(e_group / full_coop) if full_coop > 0 else float("nan")
    return GameOutcome(
        game_id=log.game_id,
        config_id=log.config.config_id,
        arm=log.spec.arm,
        e_group=e_group,
        e_full_cooperation=full_coop,
        e_full_defection=full_defect,
        efficiency=eff,
        normalized_efficiency=norm,
        mean_contribution_fraction=mean_contribution_fraction(log),
        included=inclusion_filter(log, any_time_dropout=any_time_dropout),
    )
