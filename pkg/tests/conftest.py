import sys
import dataclasses

import pytest

from pgg.agents import PolicySpec
from pgg.design_space import PggConfig
from pgg.engine import GameSpec

BASE = dict(
    group_size=2,
    game_length=1,
    contribution_type="variable",
    contribution_framing="opt_in",
    mpcr=1.0,
    communication=False,
    peer_outcome_visibility=False,
    actor_anonymity="hidden",
    horizon_knowledge=False,
    peer_incentive_cost=1,
    punishment_impact=1,
    reward_enabled=False,
    reward_impact=1.0,
)


def make_config(**overrides) -> PggConfig:
    """Config with multiplier = mpcr * group_size; defaults give 2 players, M=2, 1 round."""
    return PggConfig(**(BASE | overrides))


def make_spec(policies, seed=0, dropouts=(), **overrides) -> GameSpec:
    cfg = make_config(group_size=len(policies), **overrides)
    roster = [PolicySpec(p) if isinstance(p, str) else p for p in policies]
    return GameSpec(cfg, roster, list(dropouts), seed, "g0")


@pytest.fixture
def config_factory():
    return make_config


def replace(cfg, **kw):
    return dataclasses.replace(cfg, **kw)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
