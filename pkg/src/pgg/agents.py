"""Scripted decision policies for simulated players.

Policies are pure functions of an :class:`~pgg.engine.Observation` and a
random stream. Ties are always broken by ascending player id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .design_space import round_half_away

if TYPE_CHECKING:
    from .engine import Observation

ENDOWMENT = 20

POLICIES = (
    "always_cooperate",
    "always_defect",
    "fractional",
    "conditional_cooperator",
    "norm_enforcer",
    "reciprocator",
    "random",
)


@dataclass(frozen=True)
class PolicySpec:
    name: str
    fraction: float = 1.0
    threshold: int = 10
    budget: int = 1

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICIES}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must be in [0, 1], got {self.fraction}")
        if not 0 <= self.threshold <= ENDOWMENT + 1:
            raise ValueError(f"threshold must be in [0, {ENDOWMENT + 1}], got {self.threshold}")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    def to_dict(self) -> dict:
        return {
            "policy": self.name,
            "params": {"fraction": self.fraction, "threshold": self.threshold, "budget": self.budget},
        }


def _nearest_all_or_nothing(amount: float) -> int:
    return ENDOWMENT if amount >= ENDOWMENT / 2 else 0


def decide_contribution(policy: PolicySpec, obs: "Observation", rng: np.random.Generator) -> int:
    name = policy.name
    if name == "always_cooperate":
        return ENDOWMENT
    if name == "always_defect":
        return 0
    if name == "random":
        if obs.all_or_nothing:
            return int(rng.choice([0, ENDOWMENT]))
        return int(rng.integers(0, ENDOWMENT + 1))
    if name == "conditional_cooperator":
        others = [c for pid, c in sorted(obs.last_contributions.items()) if pid != obs.player_id]
        if not others:
            amount = ENDOWMENT
        else:
            amount = round_half_away(sum(others) / len(others))
        return _nearest_all_or_nothing(amount) if obs.all_or_nothing else amount
    # fractional, and the contribution side of the sanctioning policies
    amount = round_half_away(ENDOWMENT * policy.fraction)
    return _nearest_all_or_nothing(amount) if obs.all_or_nothing else amount


def decide_redistribution(
    policy: PolicySpec, obs: "Observation", rng: np.random.Generator
) -> list[tuple[int, int, int, str]]:
    """Return ``(actor, target, units, kind)`` sanction actions."""
    me = obs.player_id
    cost = obs.peer_incentive_cost
    peers = {pid: c for pid, c in (obs.contributions or {}).items() if pid != me}
    if policy.name == "norm_enforcer" and obs.punishment_enabled:
        affordable = int(obs.balance // cost) if cost > 0 else policy.budget
        n_units = min(policy.budget, affordable)
        low = sorted((c, pid) for pid, c in peers.items() if c < policy.threshold)
        return [(me, pid, 1, "punish") for _, pid in low[:n_units]]
    if policy.name == "reciprocator" and obs.reward_enabled and peers:
        if obs.balance < cost:
            return []
        best = max(peers.values())
        target = min(pid for pid, c in peers.items() if c == best)
        return [(me, target, 1, "reward")]
    return []


def load_roster(path: str | Path) -> dict:
    """Parse agents.json into ``{"seats": [...]} or {"mix": {...}}``.

    The file is either a list of ``{"policy": name, "params": {...}}`` entries
    assigned to seats in order (cycling when the group is larger), or an
    object ``{"mix": {name: count}, "params": {name: {...}}}`` whose counts
    are sampling weights for each seat.
    """
    data = json.loads(Path(path).read_text())
    return parse_roster(data)


def parse_roster(data) -> dict:
    if isinstance(data, list):
        return {"seats": [_policy_from_entry(e) for e in data]}
    if isinstance(data, dict) and "mix" in data:
        params = data.get("params", {})
        mix = {name: int(count) for name, count in data["mix"].items()}
        if not mix or sum(mix.values()) <= 0:
            raise ValueError("mix must contain at least one positive count")
        policies = {name: PolicySpec(name, **params.get(name, {})) for name in mix}
        return {"mix": mix, "policies": policies}
    if isinstance(data, dict) and "seats" in data:
        return {"seats": [_policy_from_entry(e) for e in data["seats"]]}
    raise ValueError("agents file must be a list of policies or an object with 'mix'")


def _policy_from_entry(entry) -> PolicySpec:
    if isinstance(entry, str):
        return PolicySpec(entry)
    return PolicySpec(entry["policy"], **entry.get("params", {}))


def assign_seats(roster: dict, group_size: int, rng: np.random.Generator) -> list[PolicySpec]:
    if "seats" in roster:
        seats = roster["seats"]
        if not seats:
            raise ValueError("roster has no seats")
        return [seats[i % len(seats)] for i in range(group_size)]
    names = sorted(roster["mix"])
    weights = np.array([roster["mix"][n] for n in names], dtype=float)
    picks = rng.choice(len(names), size=group_size, p=weights / weights.sum())
    return [roster["policies"][names[i]] for i in picks]
