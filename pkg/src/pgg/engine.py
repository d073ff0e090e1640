"""Deterministic public goods game engine.

One round runs three stages: contribution, redistribution (peer punishment and
reward), and settlement. Money is tracked with :class:`fractions.Fraction` so
that the per-round conservation identity holds exactly even when the reward
impact is fractional; only the public-fund share is rounded to whole coins.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from . import agents
from .agents import PolicySpec
from .design_space import PggConfig, round_half_away

log = logging.getLogger(__name__)

ENDOWMENT = 20
INITIAL_BANK = 20


class GameError(Exception):
    pass


class InvalidActionError(GameError):
    def __init__(self, player_id, message):
        super().__init__(f"player {player_id}: {message}")
        self.player_id = player_id


class MechanismDisabledError(GameError):
    pass


class InvalidTargetError(GameError):
    pass


class InsufficientBalanceError(GameError):
    def __init__(self, actor, spend, balance):
        super().__init__(f"player {actor} spends {spend} coins with balance {balance}")
        self.actor = actor


@dataclass
class GameSpec:
    config: PggConfig
    roster: list[PolicySpec]
    dropout_schedule: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    game_id: str = ""

    @property
    def intended_size(self) -> int:
        return len(self.roster)

    def validate(self) -> None:
        cfg = self.config
        if len(self.roster) != cfg.group_size:
            raise ValueError(
                f"roster has {len(self.roster)} seats but group_size is {cfg.group_size}"
            )
        for pid, rnd in self.dropout_schedule:
            if not 0 <= pid < cfg.group_size:
                raise ValueError(f"dropout for unknown player {pid}")
            if not 1 <= rnd <= cfg.game_length:
                raise ValueError(f"dropout round {rnd} outside [1, {cfg.game_length}]")

    @property
    def arm(self) -> str:
        return "treatment" if self.config.punishment_enabled else "control"


@dataclass
class PlayerState:
    player_id: int
    balance: Fraction = Fraction(INITIAL_BANK)
    active: bool = True
    contributions: list[int] = field(default_factory=list)


@dataclass
class RoundRecord:
    round: int
    contributions: dict[int, int]
    fund: int
    share: int
    punishments: list[tuple[int, int, int]]
    rewards: list[tuple[int, int, int]]
    net: dict[int, Fraction]
    balances: dict[int, Fraction]

    @property
    def n_active(self) -> int:
        return len(self.contributions)

    @property
    def total_net(self) -> Fraction:
        return sum(self.net.values(), Fraction(0))


@dataclass
class GameLog:
    spec: GameSpec
    rounds: list[RoundRecord]
    final_balances: dict[int, Fraction]
    started_size: int
    dropouts: list[tuple[int, int]]
    truncated: bool = False

    @property
    def config(self) -> PggConfig:
        return self.spec.config

    @property
    def intended_size(self) -> int:
        return self.spec.intended_size

    @property
    def game_id(self) -> str:
        return self.spec.game_id


@dataclass
class Observation:
    """What one player can see at one stage.

    Optional fields are ``None`` exactly when the config hides them.
    """

    round: int
    player_id: int
    stage: str
    balance: Fraction
    all_or_nothing: bool
    punishment_enabled: bool
    reward_enabled: bool
    peer_incentive_cost: int
    active_players: list[int]
    last_contributions: dict[int, int]
    own_last_net: Optional[Fraction]
    contributions: Optional[dict[int, int]] = None
    total_rounds: Optional[int] = None
    rounds_remaining: Optional[int] = None
    peer_earnings: Optional[dict[int, Fraction]] = None
    peer_sanctions_received: Optional[dict[int, tuple[int, int]]] = None
    sanction_actors: Optional[list[tuple[int, int, int, str]]] = None
    messages: Optional[list[tuple[int, int, str]]] = None


class Game:
    """Round-by-round state machine for one group."""

    def __init__(self, spec: GameSpec):
        spec.validate()
        self.spec = spec
        self.config = spec.config
        self.players = {i: PlayerState(i) for i in range(spec.intended_size)}
        self.round = 0
        self.records: list[RoundRecord] = []
        self.messages: list[tuple[int, int, str]] = []
        self.dropouts: list[tuple[int, int]] = []
        self._schedule = defaultdict(list)
        for pid, rnd in spec.dropout_schedule:
            self._schedule[rnd].append(pid)
        self._reward_impact = Fraction(self.config.reward_impact)
        self._contributions: Optional[dict[int, int]] = None
        self._sanctions: Optional[list[tuple[int, int, int, str]]] = None

    # -- helpers -----------------------------------------------------------

    @property
    def active_ids(self) -> list[int]:
        return [pid for pid, p in self.players.items() if p.active]

    def share_for(self, fund: int, n_active: int) -> int:
        return round_half_away(self.config.multiplier * fund / n_active)

    # -- round lifecycle ---------------------------------------------------

    def begin_round(self) -> None:
        if self._contributions is not None:
            raise GameError("previous round was not settled")
        self.round += 1
        for pid in sorted(self._schedule.get(self.round, ())):
            self.apply_dropout(pid)

    def apply_dropout(self, player_id: int) -> None:
        player = self.players[player_id]
        if not player.active:
            log.warning("player %s already inactive; dropout ignored", player_id)
            return
        player.active = False
        self.dropouts.append((player_id, self.round))

    def broadcast(self, player_id: int, text: str) -> None:
        if not self.config.communication:
            raise MechanismDisabledError("communication is disabled")
        self.messages.append((self.round, player_id, str(text)))

    def contribution_stage(self, actions: Mapping[int, Optional[int]]) -> dict[int, int]:
        cfg = self.config
        default = ENDOWMENT if cfg.opt_out else 0
        out = {}
        for pid in self.active_ids:
            amount = actions.get(pid)
            if amount is None:
                amount = default
            if isinstance(amount, bool) or int(amount) != amount:
                raise InvalidActionError(pid, f"contribution {amount!r} is not an integer")
            amount = int(amount)
            if not 0 <= amount <= ENDOWMENT:
                raise InvalidActionError(pid, f"contribution {amount} outside [0, {ENDOWMENT}]")
            if cfg.all_or_nothing and amount not in (0, ENDOWMENT):
                raise InvalidActionError(pid, f"contribution {amount} not all-or-nothing")
            out[pid] = amount
        for pid in actions:
            if pid not in out:
                raise InvalidActionError(pid, "inactive player cannot act")
        self._contributions = out
        return out

    def redistribution_stage(
        self, actions: Sequence[tuple[int, int, int, str]], on_overspend: str = "raise"
    ) -> list[tuple[int, int, int, str]]:
        """Validate and record sanctions against stage-start balances.

        An actor whose combined spending exceeds their balance has their whole
        action set rejected: ``on_overspend="raise"`` raises, ``"drop"``
        discards that actor's actions and keeps everyone else's.
        """
        if self._contributions is None:
            raise GameError("redistribution before contribution")
        cfg = self.config
        active = set(self.active_ids)
        by_actor: dict[int, list] = defaultdict(list)
        for actor, target, units, kind in actions:
            if kind == "punish" and not cfg.punishment_enabled:
                raise MechanismDisabledError("punishment is disabled in this game")
            if kind == "reward" and not cfg.reward_enabled:
                raise MechanismDisabledError("reward is disabled in this game")
            if kind not in ("punish", "reward"):
                raise InvalidActionError(actor, f"unknown sanction kind {kind!r}")
            if actor not in active:
                raise InvalidActionError(actor, "inactive player cannot act")
            if target not in active:
                raise InvalidTargetError(f"player {target} is not an active target")
            if target == actor:
                raise InvalidTargetError(f"player {actor} cannot target themselves")
            if isinstance(units, bool) or int(units) != units or units <= 0:
                raise InvalidActionError(actor, f"units must be a positive integer, got {units!r}")
            by_actor[actor].append((actor, target, int(units), kind))
        accepted = []
        for actor in sorted(by_actor):
            spend = sum(u for _, _, u, _ in by_actor[actor]) * cfg.peer_incentive_cost
            balance = self.players[actor].balance
            if spend > balance:
                if on_overspend == "raise":
                    raise InsufficientBalanceError(actor, spend, balance)
                log.warning("player %s overspent (%s > %s); actions rejected", actor, spend, balance)
                continue
            accepted.extend(by_actor[actor])
        self._sanctions = accepted
        return accepted

    def settle_round(self) -> RoundRecord:
        if self._contributions is None:
            raise GameError("nothing to settle")
        cfg = self.config
        contribs = self._contributions
        sanctions = self._sanctions or []
        n_active = len(contribs)
        fund = sum(contribs.values())
        share = self.share_for(fund, n_active)
        cost = cfg.peer_incentive_cost
        net = {pid: Fraction(ENDOWMENT - c + share) for pid, c in contribs.items()}
        punishments, rewards = [], []
        for actor, target, units, kind in sanctions:
            spent = units * cost
            net[actor] -= spent
            if kind == "punish":
                net[target] -= spent * cfg.punishment_impact
                punishments.append((actor, target, units))
            else:
                net[target] += spent * self._reward_impact
                rewards.append((actor, target, units))
        for pid, amount in net.items():
            player = self.players[pid]
            player.balance += amount
            player.contributions.append(contribs[pid])
        record = RoundRecord(
            round=self.round,
            contributions=dict(contribs),
            fund=fund,
            share=share,
            punishments=punishments,
            rewards=rewards,
            net=net,
            balances={pid: self.players[pid].balance for pid in contribs},
        )
        self.records.append(record)
        self._contributions = None
        self._sanctions = None
        return record

    # -- observations ------------------------------------------------------

    def observe(self, player_id: int, stage: str) -> Observation:
        cfg = self.config
        prev = self.records[-1] if self.records else None
        obs = Observation(
            round=self.round,
            player_id=player_id,
            stage=stage,
            balance=self.players[player_id].balance,
            all_or_nothing=cfg.all_or_nothing,
            punishment_enabled=cfg.punishment_enabled,
            reward_enabled=cfg.reward_enabled,
            peer_incentive_cost=cfg.peer_incentive_cost,
            active_players=self.active_ids,
            last_contributions=dict(prev.contributions) if prev else {},
            own_last_net=prev.net.get(player_id) if prev else None,
        )
        if stage == "redistribution" and self._contributions is not None:
            obs.contributions = dict(self._contributions)
        if cfg.horizon_knowledge:
            obs.total_rounds = cfg.game_length
            obs.rounds_remaining = cfg.game_length - self.round
        if prev is not None and cfg.peer_outcome_visibility:
            obs.peer_earnings = {p: v for p, v in prev.net.items() if p != player_id}
            received = defaultdict(lambda: [0, 0])
            for _, target, units in prev.punishments:
                received[target][0] += units
            for _, target, units in prev.rewards:
                received[target][1] += units
            obs.peer_sanctions_received = {
                p: tuple(received[p]) for p in prev.net if p != player_id
            }
        if prev is not None and cfg.identities_revealed:
            entries = [(a, t, u, "punish") for a, t, u in prev.punishments]
            entries += [(a, t, u, "reward") for a, t, u in prev.rewards]
            if not cfg.peer_outcome_visibility:
                entries = [e for e in entries if e[1] == player_id]
            obs.sanction_actors = entries
        if cfg.communication:
            obs.messages = list(self.messages)
        return obs

    def log(self, truncated: bool = False) -> GameLog:
        round_one_drops = sum(1 for _, rnd in self.dropouts if rnd == 1)
        return GameLog(
            spec=self.spec,
            rounds=list(self.records),
            final_balances={pid: p.balance for pid, p in self.players.items()},
            started_size=self.spec.intended_size - round_one_drops,
            dropouts=list(self.dropouts),
            truncated=truncated,
        )


def run_game(spec: GameSpec) -> GameLog:
    """Play every round of ``spec`` with its scripted roster."""
    game = Game(spec)
    rng = np.random.default_rng(spec.seed)
    truncated = False
    for _ in range(spec.config.game_length):
        game.begin_round()
        active = game.active_ids
        if not active:
            truncated = True
            break
        decisions = {
            pid: agents.decide_contribution(
                spec.roster[pid], game.observe(pid, "contribution"), rng
            )
            for pid in active
        }
        game.contribution_stage(decisions)
        sanctions = []
        for pid in active:
            sanctions.extend(
                agents.decide_redistribution(
                    spec.roster[pid], game.observe(pid, "redistribution"), rng
                )
            )
        game.redistribution_stage(sanctions, on_overspend="drop")
        game.settle_round()
    return game.log(truncated=truncated)
