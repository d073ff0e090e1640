"""Random legal play used by property tests and the acceptance suite."""

from fractions import Fraction

import numpy as np

from pgg.agents import PolicySpec
from pgg.design_space import N_DIMS, map_unit_point_to_config
from pgg.engine import ENDOWMENT, Game, GameSpec


def random_config(rng, punishment=None):
    cfg = map_unit_point_to_config(rng.random(N_DIMS))
    enabled = bool(rng.integers(2)) if punishment is None else punishment
    return cfg.with_punishment(enabled)


def random_contributions(game, rng):
    out = {}
    for pid in game.active_ids:
        if game.config.all_or_nothing:
            out[pid] = int(rng.choice([0, ENDOWMENT]))
        else:
            out[pid] = int(rng.integers(0, ENDOWMENT + 1))
    return out


def random_sanctions(game, rng):
    """Legal sanctions: enabled kinds only, active non-self targets, within balance."""
    cfg = game.config
    kinds = [k for k, on in (("punish", cfg.punishment_enabled), ("reward", cfg.reward_enabled)) if on]
    active = game.active_ids
    actions = []
    if not kinds or len(active) < 2:
        return actions
    for actor in active:
        budget = game.players[actor].balance
        for _ in range(int(rng.integers(0, 3))):
            target = int(rng.choice([p for p in active if p != actor]))
            units = int(rng.integers(1, 4))
            spend = units * cfg.peer_incentive_cost
            if spend > budget:
                break
            budget -= spend
            actions.append((actor, target, units, str(rng.choice(kinds))))
    return actions


def ledger_identity_total(cfg, record):
    """Closed-form group net for one round from aggregate quantities only."""
    n = record.n_active
    total_c = sum(record.contributions.values())
    sp = sum(u for _, _, u in record.punishments) * cfg.peer_incentive_cost
    sr = sum(u for _, _, u in record.rewards) * cfg.peer_incentive_cost
    return (
        Fraction(ENDOWMENT * n - total_c + n * record.share)
        - sp * (1 + cfg.punishment_impact)
        + sr * (Fraction(cfg.reward_impact) - 1)
    )


def play_random_game(rng, cfg=None, dropout_rate=0.1):
    cfg = cfg or random_config(rng)
    schedule = []
    for pid in range(cfg.group_size):
        if rng.random() < dropout_rate:
            schedule.append((pid, int(rng.integers(1, cfg.game_length + 1))))
    game = Game(GameSpec(cfg, [PolicySpec("random")] * cfg.group_size, schedule, 0, "rand"))
    records = []
    for _ in range(cfg.game_length):
        game.begin_round()
        if not game.active_ids:
            break
        game.contribution_stage(random_contributions(game, rng))
        game.redistribution_stage(random_sanctions(game, rng))
        records.append(game.settle_round())
    return game, records
