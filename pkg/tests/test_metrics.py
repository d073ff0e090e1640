from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgg.design_space import round_half_away
from pgg.engine import run_game
from pgg.metrics import (
    UndefinedMeasureError,
    benchmark_earnings,
    efficiency,
    game_outcome,
    group_earnings,
    inclusion_filter,
    mean_contribution_fraction,
    normalized_efficiency,
    normalized_efficiency_exact,
)

from _random_play import play_random_game
from conftest import make_spec


def brute_force_benchmarks(cfg, active_counts):
    """Play hypothetical all-20 and all-0 groups round by round with the same active counts."""
    coop = defect = Fraction(0)
    for n in active_counts:
        share_coop = round_half_away(cfg.multiplier * 20 * n / n)
        coop += sum(20 - 20 + share_coop for _ in range(n))
        defect += sum(20 - 0 + round_half_away(cfg.multiplier * 0 / n) for _ in range(n))
    return coop, defect


def test_benchmarks_two_players():
    log = run_game(make_spec(["always_cooperate"] * 2, mpcr=1.0))
    assert benchmark_earnings(log) == (80, 40)


def test_benchmarks_with_dropout():
    log = run_game(make_spec(["always_cooperate"] * 2, mpcr=1.0, game_length=2, dropouts=[(1, 2)]))
    assert benchmark_earnings(log) == (120, 60)


def test_multiplier_one_is_degenerate():
    log = run_game(make_spec(["always_cooperate"] * 2, mpcr=0.5))
    fc, fd = benchmark_earnings(log)
    assert fc == fd
    with pytest.raises(UndefinedMeasureError):
        normalized_efficiency(log)
    assert game_outcome(log).normalized_efficiency is None


def test_efficiency_examples():
    assert efficiency(run_game(make_spec(["always_cooperate"] * 2, mpcr=1.0, game_length=3))) == 1.0
    assert efficiency(run_game(make_spec(["always_defect"] * 2, mpcr=1.0))) == 0.5
    assert efficiency(run_game(make_spec(["always_defect"] * 4, mpcr=1.0))) == 0.25


def test_normalized_efficiency_examples():
    assert normalized_efficiency(run_game(make_spec(["always_defect"] * 3, mpcr=0.5))) == 0.0
    assert normalized_efficiency(run_game(make_spec(["always_cooperate"] * 3, mpcr=0.5))) == 1.0
    assert normalized_efficiency(run_game(make_spec(["always_cooperate", "always_defect"], mpcr=1.0))) == 0.5


def test_mean_contribution_fraction():
    assert mean_contribution_fraction(run_game(make_spec(["always_cooperate"] * 3, mpcr=0.5))) == 1.0
    assert mean_contribution_fraction(run_game(make_spec(["always_defect"] * 3, mpcr=0.5))) == 0.0
    from pgg.agents import PolicySpec

    log = run_game(make_spec([PolicySpec("fractional", fraction=0.5), "always_cooperate"], mpcr=1.0))
    assert mean_contribution_fraction(log) == 0.75


@pytest.mark.parametrize(
    "intended,started,expected",
    [(5, 4, False), (20, 17, True), (7, 7, True), (50, 41, True), (50, 40, False)],
)
def test_inclusion_filter(intended, started, expected):
    assert inclusion_filter(started, intended) is expected


def test_inclusion_filter_any_time_option():
    log = run_game(make_spec(["always_cooperate"] * 5, mpcr=0.5, game_length=3, dropouts=[(4, 3)]))
    assert inclusion_filter(log) is True
    assert inclusion_filter(log, any_time_dropout=True) is False


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 60), st.data())
def test_filter_monotone_in_started_size(intended, data):
    started = data.draw(st.integers(0, intended))
    if inclusion_filter(started, intended) is False:
        assert all(inclusion_filter(s, intended) is False for s in range(started + 1))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_benchmarks_match_brute_force_and_identities(seed):
    rng = np.random.default_rng(seed)
    game, _ = play_random_game(rng)
    log = game.log()
    cfg = log.config
    fc, fd = benchmark_earnings(log)
    assert (fc, fd) == brute_force_benchmarks(cfg, [r.n_active for r in log.rounds])
    assert 0.0 <= mean_contribution_fraction(log) <= 1.0
    if fc != fd and fc > 0:
        eff = group_earnings(log) / fc  # exact
        assert normalized_efficiency_exact(log) == (eff * fc - fd) / (fc - fd)
        no_sanctions = all(not r.punishments and not r.rewards for r in log.rounds)
        if no_sanctions:
            assert 0 <= normalized_efficiency_exact(log) <= 1
