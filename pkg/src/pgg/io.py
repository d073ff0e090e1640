"""Canonical CSV/JSON formats, dataset ingestion and run manifests.

Tables are UTF-8 CSV with a header row. Booleans are written ``true``/``false``,
design reals with ``repr`` (exact round trip), and derived per-round money
values with 12 significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__
from .design_space import PARAMETER_ORDER, PggConfig
from .engine import Game, GameLog, GameSpec
from .metrics import GameOutcome, game_outcome
from .predict import ExperimentRecord

log = logging.getLogger(__name__)

INT_PARAMS = ("group_size", "game_length", "peer_incentive_cost", "punishment_impact")
REAL_PARAMS = ("mpcr", "reward_impact")
BOOL_PARAMS = (
    "communication",
    "peer_outcome_visibility",
    "horizon_knowledge",
    "reward_enabled",
)

DESIGN_COLUMNS = ("config_id", "wave") + PARAMETER_ORDER
GAME_COLUMNS = ("game_id", "config_id", "arm", "intended_size", "started_size", "seed")
DECISION_COLUMNS = ("game_id", "round", "player_id", "contribution")
SANCTION_COLUMNS = ("game_id", "round", "actor", "target", "units", "kind")
BALANCE_COLUMNS = ("game_id", "round", "player_id", "net", "balance")
OUTCOME_COLUMNS = (
    "game_id",
    "config_id",
    "arm",
    "efficiency",
    "normalized_efficiency",
    "mean_contribution_fraction",
    "included",
)
RECORD_COLUMNS = (
    ("config_id", "wave")
    + PARAMETER_ORDER
    + ("control_efficiency", "treatment_efficiency", "n_control", "n_treatment")
)


class IngestionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Scalar encoding
# ---------------------------------------------------------------------------

_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def fmt_bool(v: bool) -> str:
    return "true" if v else "false"


def fmt_real(v: float) -> str:
    return repr(float(v))


def fmt_money(v) -> str:
    return format(float(v), ".12g")


def _read_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: missing header row")
        return list(reader.fieldnames), list(reader)


def _write_rows(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------


def _design_row(cfg: PggConfig) -> list[str]:
    row = [cfg.config_id, cfg.wave]
    for name in PARAMETER_ORDER:
        v = getattr(cfg, name)
        if name in BOOL_PARAMS:
            row.append(fmt_bool(v))
        elif name in REAL_PARAMS:
            row.append(fmt_real(v))
        else:
            row.append(str(v))
    return row


def config_from_row(row: Mapping[str, str]) -> PggConfig:
    kwargs = {}
    for name in PARAMETER_ORDER:
        text = row[name]
        if name in INT_PARAMS:
            kwargs[name] = parse_int(text)
        elif name in REAL_PARAMS:
            kwargs[name] = float(text)
        elif name in BOOL_PARAMS:
            kwargs[name] = parse_bool(text)
        else:
            kwargs[name] = str(text).strip()
    return PggConfig(**kwargs, config_id=row["config_id"], wave=row.get("wave") or "learning")


def write_designs(path, configs: Sequence[PggConfig]) -> None:
    _write_rows(path, DESIGN_COLUMNS, (_design_row(c) for c in configs))


def read_designs(path) -> dict[str, PggConfig]:
    header, rows = _read_rows(path)
    _require(header, DESIGN_COLUMNS, path)
    configs = {}
    for row in rows:
        cfg = config_from_row(row)
        if cfg.config_id in configs:
            raise IngestionError(f"{path}: duplicate config_id {cfg.config_id}")
        configs[cfg.config_id] = cfg
    return configs


def _require(header, columns, path):
    for col in columns:
        if col not in header:
            raise IngestionError(f"{path}: missing column {col!r}")


# ---------------------------------------------------------------------------
# Game logs and outcomes
# ---------------------------------------------------------------------------


def write_game_logs(out_dir, logs: Sequence[GameLog]) -> None:
    out = Path(out_dir)
    games, decisions, sanctions, balances = [], [], [], []
    for g in logs:
        gid = g.game_id
        games.append([gid, g.config.config_id, g.spec.arm, g.intended_size, g.started_size, g.spec.seed])
        for r in g.rounds:
            for pid in sorted(r.contributions):
                decisions.append([gid, r.round, pid, r.contributions[pid]])
                balances.append([gid, r.round, pid, fmt_money(r.net[pid]), fmt_money(r.balances[pid])])
            for kind, acts in (("punish", r.punishments), ("reward", r.rewards)):
                for actor, target, units in acts:
                    sanctions.append([gid, r.round, actor, target, units, kind])
    _write_rows(out / "games.csv", GAME_COLUMNS, games)
    _write_rows(out / "decisions.csv", DECISION_COLUMNS, decisions)
    _write_rows(out / "sanctions.csv", SANCTION_COLUMNS, sanctions)
    _write_rows(out / "balances.csv", BALANCE_COLUMNS, balances)


def write_outcomes(path, outcomes: Sequence[GameOutcome]) -> None:
    rows = (
        [
            o.game_id,
            o.config_id,
            o.arm,
            fmt_real(o.efficiency),
            "" if o.normalized_efficiency is None else fmt_real(o.normalized_efficiency),
            fmt_real(o.mean_contribution_fraction),
            fmt_bool(o.included),
        ]
        for o in outcomes
    )
    _write_rows(path, OUTCOME_COLUMNS, rows)


@dataclass
class OutcomeRow:
    game_id: str
    config_id: str
    arm: str
    efficiency: float
    normalized_efficiency: Optional[float]
    mean_contribution_fraction: float
    included: bool


def read_outcomes(path) -> list[OutcomeRow]:
    header, rows = _read_rows(path)
    _require(header, OUTCOME_COLUMNS, path)
    out = []
    for row in rows:
        ne = row["normalized_efficiency"]
        out.append(
            OutcomeRow(
                row["game_id"],
                row["config_id"],
                row["arm"],
                float(row["efficiency"]),
                float(ne) if ne != "" else None,
                float(row["mean_contribution_fraction"]),
                parse_bool(row["included"]),
            )
        )
    return out


def write_records(path, records: Sequence[ExperimentRecord]) -> None:
    rows = (
        _design_row(r.config)
        + [fmt_real(r.control_efficiency), fmt_real(r.treatment_efficiency), r.n_control, r.n_treatment]
        for r in records
    )
    _write_rows(path, RECORD_COLUMNS, rows)


def read_records(path) -> list[ExperimentRecord]:
    header, rows = _read_rows(path)
    _require(header, RECORD_COLUMNS, path)
    return [
        ExperimentRecord(
            config=config_from_row(row),
            control_efficiency=float(row["control_efficiency"]),
            treatment_efficiency=float(row["treatment_efficiency"]),
            n_control=int(row["n_control"]),
            n_treatment=int(row["n_treatment"]),
            wave=row["wave"],
        )
        for row in rows
    ]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Schema-driven ingestion
# ---------------------------------------------------------------------------

REQUIRED = {
    "configs": DESIGN_COLUMNS,
    "games": ("game_id", "config_id", "arm"),
    "decisions": DECISION_COLUMNS,
    "sanctions": SANCTION_COLUMNS,
}
OPTIONAL = {"games": ("intended_size", "started_size", "seed")}


@dataclass
class SchemaMap:
    """Where each canonical column lives in a source dataset.

    ``tables`` maps a canonical table name to ``{"file": ..., "columns":
    {canonical: source}, "values": {canonical: {source_value: canonical_value}}}``.
    A canonical column missing from ``columns`` is looked up under its own
    name. The sanctions table is optional as a whole.
    """

    tables: dict
    outliers: list[str] = field(default_factory=list)
    technical_issues: list[str] = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "SchemaMap":
        data = json.loads(Path(path).read_text())
        return cls(
            tables=data["tables"],
            outliers=[str(g) for g in data.get("outliers", [])],
            technical_issues=[str(g) for g in data.get("technical_issues", [])],
        )

    @classmethod
    def canonical(cls) -> "SchemaMap":
        """Identity schema for directories written by this package."""
        return cls(
            tables={
                "configs": {"file": "designs.csv"},
                "games": {"file": "games.csv"},
                "decisions": {"file": "decisions.csv"},
                "sanctions": {"file": "sanctions.csv"},
            }
        )

    def source_column(self, table: str, column: str) -> str:
        return self.tables[table].get("columns", {}).get(column, column)

    def translate(self, table: str, column: str, value: str) -> str:
        mapping = self.tables[table].get("values", {}).get(column)
        if mapping is None:
            return value
        return mapping.get(value, value)


def _load_table(root: Path, schema: SchemaMap, table: str) -> list[dict]:
    spec = schema.tables.get(table)
    if spec is None:
        if table == "sanctions":
            return []
        raise IngestionError(f"schema has no {table!r} table")
    path = root / spec["file"]
    header, rows = _read_rows(path)
    wanted = list(REQUIRED[table]) + list(OPTIONAL.get(table, ()))
    present = {}
    for col in wanted:
        src = schema.source_column(table, col)
        if src in header:
            present[col] = src
        elif col in REQUIRED[table]:
            raise IngestionError(
                f"{table}: required column {col!r} (source column {src!r}) not found in {path.name}"
            )
    return [
        {col: schema.translate(table, col, row[src].strip()) for col, src in present.items()}
        for row in rows
    ]


@dataclass
class FilterReport:
    input: int = 0
    retained: int = 0
    excluded: dict = field(default_factory=dict)
    parse_errors: dict = field(default_factory=dict)
    by_wave: dict = field(default_factory=dict)

    def exclude(self, reason: str) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "retained": self.retained,
            "excluded": dict(sorted(self.excluded.items())),
            "parse_errors": dict(sorted(self.parse_errors.items())),
            "by_wave": self.by_wave,
        }


@dataclass
class IngestResult:
    configs: dict[str, PggConfig]
    logs: list[GameLog]
    outcomes: list[GameOutcome]
    report: FilterReport


def _replay(cfg: PggConfig, game_id: str, seed: int, decisions, sanctions) -> GameLog:
    """Rebuild a game log by replaying recorded actions through the engine.

    Presence in a round is read off the decision rows; a player absent from a
    round after playing earlier rounds dropped out at that round.
    """
    by_round = defaultdict(dict)
    for rnd, pid, c in decisions:
        if pid in by_round[rnd]:
            raise ValueError(f"duplicate decision for player {pid} in round {rnd}")
        by_round[rnd][pid] = c
    rounds = sorted(by_round)
    if rounds and rounds != list(range(1, len(rounds) + 1)):
        raise ValueError("rounds are not consecutive from 1")
    if len(rounds) > cfg.game_length:
        raise ValueError(f"{len(rounds)} rounds recorded for a {cfg.game_length}-round game")
    schedule = []
    for pid in range(cfg.group_size):
        present = [r for r in rounds if pid in by_round[r]]
        if not present:
            schedule.append((pid, 1))
            continue
        if present != list(range(1, present[-1] + 1)):
            raise ValueError(f"player {pid} left and rejoined")
        if present[-1] < len(rounds):
            schedule.append((pid, present[-1] + 1))
    for rnd in rounds:
        extra = set(by_round[rnd]) - set(range(cfg.group_size))
        if extra:
            raise ValueError(f"unknown player ids {sorted(extra)}")
    sanctions_by_round = defaultdict(list)
    for rnd, actor, target, units, kind in sanctions:
        sanctions_by_round[rnd].append((actor, target, units, kind))
    # ingested games carry no policies; the roster only fixes the seat count
    spec = GameSpec(cfg, [None] * cfg.group_size, schedule, seed, game_id)
    game = Game(spec)
    for rnd in rounds:
        game.begin_round()
        game.contribution_stage(by_round[rnd])
        game.redistribution_stage(sanctions_by_round[rnd], on_overspend="raise")
        game.settle_round()
    truncated = len(rounds) < cfg.game_length
    return game.log(truncated=truncated)


def ingest_dataset(
    path, schema: Optional[SchemaMap] = None, *, any_time_dropout: bool = False
) -> IngestResult:
    """Read a dataset directory into canonical configs, game logs and outcomes.

    Games are dropped, in this order, for a multiplier of exactly 1, for
    being a listed outlier, for a listed technical issue, or for failing to
    replay. Games failing the dropout filter stay in the outcomes with
    ``included=False``.
    """
    root = Path(path)
    schema = schema or SchemaMap.canonical()
    report = FilterReport()

    configs = {}
    for row in _load_table(root, schema, "configs"):
        try:
            cfg = config_from_row(row)
        except (ValueError, KeyError, TypeError) as exc:
            report.parse_errors["configs"] = report.parse_errors.get("configs", 0) + 1
            log.warning("config row skipped: %s", exc)
            continue
        configs[cfg.config_id] = cfg

    def parse(table, conv):
        out = []
        for row in _load_table(root, schema, table):
            try:
                out.append(conv(row))
            except (ValueError, KeyError, TypeError) as exc:
                report.parse_errors[table] = report.parse_errors.get(table, 0) + 1
                log.warning("%s row skipped: %s", table, exc)
        return out

    decisions = defaultdict(list)
    for gid, rnd, pid, c in parse(
        "decisions",
        lambda r: (r["game_id"], parse_int(r["round"]), parse_int(r["player_id"]), parse_int(r["contribution"])),
    ):
        decisions[gid].append((rnd, pid, c))
    sanctions = defaultdict(list)
    for gid, *rest in parse(
        "sanctions",
        lambda r: (
            r["game_id"],
            parse_int(r["round"]),
            parse_int(r["actor"]),
            parse_int(r["target"]),
            parse_int(r["units"]),
            r["kind"],
        ),
    ):
        sanctions[gid].append(tuple(rest))

    def game_row(r):
        arm = r["arm"]
        if arm not in ("control", "treatment"):
            raise ValueError(f"unknown arm {arm!r}")
        if r["config_id"] not in configs:
            raise ValueError(f"unknown config {r['config_id']!r}")
        seed = parse_int(r["seed"]) if r.get("seed") else 0
        intended = parse_int(r["intended_size"]) if r.get("intended_size") else None
        return r["game_id"], r["config_id"], arm, seed, intended

    outliers = set(schema.outliers)
    technical = set(schema.technical_issues)
    logs, outcomes = [], []
    for gid, cid, arm, seed, intended in parse("games", game_row):
        report.input += 1
        cfg = configs[cid].with_punishment(arm == "treatment")
        wave = report.by_wave.setdefault(cfg.wave, {"input": 0, "retained": 0})
        wave["input"] += 1
        if abs(cfg.multiplier - 1.0) < 1e-9:
            report.exclude("multiplier_one")
            continue
        if gid in outliers:
            report.exclude("outlier")
            continue
        if gid in technical:
            report.exclude("technical_issue")
            continue
        try:
            if intended is not None and intended != cfg.group_size:
                raise ValueError(f"intended size {intended} differs from group size {cfg.group_size}")
            glog = _replay(cfg, gid, seed, decisions.get(gid, []), sanctions.get(gid, []))
        except Exception as exc:  # replay failures are data errors, counted not fatal
            log.warning("game %s failed to replay: %s", gid, exc)
            report.exclude("replay_error")
            continue
        outcome = game_outcome(glog, any_time_dropout=any_time_dropout)
        logs.append(glog)
        outcomes.append(outcome)
        if not outcome.included:
            report.exclude("dropout")
            continue
        report.retained += 1
        wave["retained"] += 1

    for wave_name, counts in report.by_wave.items():
        arms = defaultdict(set)
        for o in outcomes:
            if o.included and configs[o.config_id].wave == wave_name:
                arms[o.config_id].add(o.arm)
        paired = sum(1 for a in arms.values() if a == {"control", "treatment"})
        counts["paired_configs"] = paired
        counts["paired_arms"] = 2 * paired
    report.by_wave = dict(sorted(report.by_wave.items()))
    return IngestResult(configs, logs, outcomes, report)


# ---------------------------------------------------------------------------
# Seeds and manifests
# ---------------------------------------------------------------------------


def derive_seed(master: int, stage: str, unit: str = "") -> int:
    """64-bit seed from sha256 of ``"master:stage:unit"``.

    Depends only on its arguments, so a unit's stream is the same whatever
    order or process the unit runs in.
    """
    digest = hashlib.sha256(f"{master}:{stage}:{unit}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    master_seed: Optional[int] = None
    version: str = __version__
    parameters: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    status: str = "ok"
    error: Optional[dict] = None

    def add_input(self, path) -> None:
        self.inputs[Path(path).name] = file_digest(path)

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def to_dict(self) -> dict:
        d = {
            "command": self.command,
            "master_seed": self.master_seed,
            "version": self.version,
            "parameters": self.parameters,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "seeds": self.seeds,
            "status": self.status,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    def write(self, path) -> None:
        write_json(path, self.to_dict())
