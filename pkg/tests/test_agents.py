import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgg.agents import (
    POLICIES,
    PolicySpec,
    assign_seats,
    decide_contribution,
    decide_redistribution,
    load_roster,
    parse_roster,
)
from pgg.engine import Observation, run_game
from pgg.metrics import normalized_efficiency

from conftest import make_spec


def obs(pid=0, contributions=None, last=None, balance=20, aon=False, punish=True, reward=True, cost=1):
    return Observation(
        round=2,
        player_id=pid,
        stage="redistribution" if contributions is not None else "contribution",
        balance=Fraction(balance),
        all_or_nothing=aon,
        punishment_enabled=punish,
        reward_enabled=reward,
        peer_incentive_cost=cost,
        active_players=[0, 1, 2],
        last_contributions=last or {},
        own_last_net=None,
        contributions=contributions,
    )


RNG = np.random.default_rng(0)


def test_fixed_policies():
    assert decide_contribution(PolicySpec("always_cooperate"), obs(), RNG) == 20
    assert decide_contribution(PolicySpec("always_defect"), obs(), RNG) == 0


def test_fractional_rounding_and_all_or_nothing():
    assert decide_contribution(PolicySpec("fractional", fraction=0.525), obs(), RNG) == 11  # 10.5 -> 11
    assert decide_contribution(PolicySpec("fractional", fraction=0.3), obs(aon=True), RNG) == 0
    assert decide_contribution(PolicySpec("fractional", fraction=0.5), obs(aon=True), RNG) == 20


def test_conditional_cooperator():
    pol = PolicySpec("conditional_cooperator")
    assert decide_contribution(pol, obs(last={0: 0, 1: 10, 2: 20}), RNG) == 15
    assert decide_contribution(pol, obs(last={}), RNG) == 20
    assert decide_contribution(pol, obs(last={0: 20, 1: 0, 2: 5}, aon=True), RNG) == 0


def test_random_policy_legal_set():
    rng = np.random.default_rng(3)
    vals = {decide_contribution(PolicySpec("random"), obs(aon=True), rng) for _ in range(50)}
    assert vals == {0, 20}
    vals = [decide_contribution(PolicySpec("random"), obs(), rng) for _ in range(500)]
    assert min(vals) == 0 and max(vals) == 20


def test_norm_enforcer_targets_low_contributor():
    acts = decide_redistribution(PolicySpec("norm_enforcer", threshold=10), obs(contributions={0: 20, 1: 5, 2: 20}), RNG)
    assert acts == [(0, 1, 1, "punish")]


def test_norm_enforcer_budget_order_and_balance():
    pol = PolicySpec("norm_enforcer", threshold=10, budget=2)
    c = {0: 20, 1: 5, 2: 5, 3: 0}
    assert decide_redistribution(pol, obs(contributions=c), RNG) == [(0, 3, 1, "punish"), (0, 1, 1, "punish")]
    assert decide_redistribution(pol, obs(contributions=c, balance=5, cost=4), RNG) == [(0, 3, 1, "punish")]
    assert decide_redistribution(pol, obs(contributions=c, punish=False), RNG) == []


def test_reciprocator_tie_goes_to_lowest_id():
    acts = decide_redistribution(PolicySpec("reciprocator"), obs(contributions={0: 0, 1: 20, 2: 20}), RNG)
    assert acts == [(0, 1, 1, "reward")]
    assert decide_redistribution(PolicySpec("reciprocator"), obs(contributions={0: 0, 1: 20}, balance=0), RNG) == []


def test_passive_policies_do_nothing():
    for name in ("always_defect", "always_cooperate", "fractional", "random", "conditional_cooperator"):
        assert decide_redistribution(PolicySpec(name), obs(contributions={0: 0, 1: 0, 2: 0}), RNG) == []


def test_policy_validation():
    with pytest.raises(ValueError):
        PolicySpec("nope")
    with pytest.raises(ValueError):
        PolicySpec("fractional", fraction=1.5)
    with pytest.raises(ValueError):
        PolicySpec("norm_enforcer", budget=-1)


def test_roster_list_cycles(tmp_path):
    path = tmp_path / "agents.json"
    path.write_text(json.dumps([{"policy": "always_cooperate"}, {"policy": "fractional", "params": {"fraction": 0.25}}]))
    seats = assign_seats(load_roster(path), 5, np.random.default_rng(0))
    assert [s.name for s in seats] == ["always_cooperate", "fractional"] * 2 + ["always_cooperate"]
    assert seats[1].fraction == 0.25


def test_roster_mix_is_seeded():
    roster = parse_roster({"mix": {"always_defect": 1, "norm_enforcer": 3}, "params": {"norm_enforcer": {"threshold": 15}}})
    a = assign_seats(roster, 12, np.random.default_rng(9))
    b = assign_seats(roster, 12, np.random.default_rng(9))
    assert a == b
    assert {s.name for s in a} <= {"always_defect", "norm_enforcer"}
    assert all(s.threshold == 15 for s in a if s.name == "norm_enforcer")
    with pytest.raises(ValueError):
        parse_roster({"mix": {}})


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.sampled_from(POLICIES), min_size=2, max_size=8),
    st.integers(0, 10_000),
    st.booleans(),
    st.booleans(),
    st.sampled_from(["variable", "all_or_nothing"]),
)
def test_policies_never_emit_illegal_actions(names, seed, punish, reward, ctype):
    # run_game uses the default "drop" overspend mode; "raise" would surface any overspend
    from pgg.engine import Game, GameSpec
    from pgg import agents

    spec = make_spec(names, seed=seed, game_length=6, mpcr=0.6, punishment_enabled=punish,
                     reward_enabled=reward, contribution_type=ctype, peer_incentive_cost=4, punishment_impact=4)
    game = Game(spec)
    rng = np.random.default_rng(seed)
    for _ in range(6):
        game.begin_round()
        decisions = {p: agents.decide_contribution(spec.roster[p], game.observe(p, "contribution"), rng) for p in game.active_ids}
        game.contribution_stage(decisions)
        acts = []
        for p in game.active_ids:
            acts += agents.decide_redistribution(spec.roster[p], game.observe(p, "redistribution"), rng)
        game.redistribution_stage(acts, on_overspend="raise")
        game.settle_round()


def test_homogeneous_rosters_hit_normalized_endpoints():
    coop = run_game(make_spec(["always_cooperate"] * 4, mpcr=0.5, game_length=5, punishment_enabled=True))
    defect = run_game(make_spec(["always_defect"] * 4, mpcr=0.5, game_length=5, punishment_enabled=True))
    assert normalized_efficiency(coop) == 1.0
    assert normalized_efficiency(defect) == 0.0
