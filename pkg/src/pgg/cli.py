"""``pgg`` command line: design -> simulate/ingest -> analyze -> predict -> report.

Every command writes a manifest (master seed, version, input and output
digests, derived seeds) next to its outputs, including on failure. Errors
exit nonzero with a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .agents import load_roster
from .design_space import random_generate, sobol_design
from .io import (
    RunManifest,
    SchemaMap,
    derive_seed,
    read_designs,
    read_outcomes,
    read_records,
    write_designs,
    write_game_logs,
    write_json,
    write_outcomes,
    write_records,
)
from .io import ingest_dataset
from .pipeline import game_level_ols, heterogeneity_analysis, outcome_summary, simulate_batch
from .predict import (
    DEFAULT_ALPHAS,
    DEFAULT_L1_RATIOS,
    LinearModel,
    base_matrix,
    build_matched_dataset,
    cross_validate_grid,
    featurize_matrix,
    fit_enet_model,
    fit_ols_model,
    prediction_report,
    target,
    Standardizer,
)

ENV_OUTPUT_DIR = "PGG_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        raise SystemExit(2)


def _output_path(given: Optional[str], default_name: str) -> Path:
    if given:
        return Path(given)
    return Path(os.environ.get(ENV_OUTPUT_DIR, ".")) / default_name


def _manifest_path(out: Path, is_dir: bool) -> Path:
    return out / "manifest.json" if is_dir else out.with_name(out.name + ".manifest.json")


def _require_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"--seed is required for '{args.command_name}'")
    return args.seed


# ---------------------------------------------------------------------------
# Commands. Each returns the list of written output paths.
# ---------------------------------------------------------------------------


def cmd_design(args, manifest: RunManifest):
    seed = _require_seed(args)
    manifest.master_seed = seed
    if args.kind == "sobol":
        configs = sobol_design(args.n, scramble=args.scramble, seed=derive_seed(seed, "design"))
        manifest.parameters = {"kind": "sobol", "n": args.n, "scramble": args.scramble}
    else:
        exclusions = []
        for path in args.exclude or []:
            manifest.add_input(path)
            exclusions.extend(read_designs(path).values())
        configs = random_generate(args.n, seed=derive_seed(seed, "design"), exclusions=exclusions)
        manifest.parameters = {"kind": "random", "n": args.n, "excluded": len(exclusions)}
    manifest.seeds["design"] = derive_seed(seed, "design")
    out = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    write_designs(out, configs)
    return [out]


def cmd_simulate(args, manifest: RunManifest):
    seed = _require_seed(args)
    manifest.master_seed = seed
    manifest.add_input(args.designs)
    manifest.add_input(args.agents)
    configs = list(read_designs(args.designs).values())
    roster = load_roster(args.agents)
    logs, outcomes = simulate_batch(
        configs, roster, seed, trials=args.trials, dropout_rate=args.dropout_rate, workers=args.workers
    )
    manifest.parameters = {
        "trials": args.trials,
        "dropout_rate": args.dropout_rate,
        "games": len(logs),
        "seed_derivation": "sha256('master:game:config_id:arm:trial')[:8]",
    }
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_designs(out / "designs.csv", configs)
    write_game_logs(out, logs)
    write_outcomes(out / "outcomes.csv", outcomes)
    return [out / n for n in ("designs.csv", "games.csv", "decisions.csv", "sanctions.csv", "balances.csv", "outcomes.csv")]


def cmd_ingest(args, manifest: RunManifest):
    schema = SchemaMap.load(args.schema) if args.schema else SchemaMap.canonical()
    if args.schema:
        manifest.add_input(args.schema)
    result = ingest_dataset(args.source, schema, any_time_dropout=args.any_time_dropout)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_designs(out / "designs.csv", list(result.configs.values()))
    write_game_logs(out, result.logs)
    write_outcomes(out / "outcomes.csv", result.outcomes)
    write_json(out / "filter_report.json", result.report.to_dict())
    manifest.parameters = {"source": Path(args.source).name, "any_time_dropout": args.any_time_dropout}
    return [out / n for n in ("designs.csv", "games.csv", "decisions.csv", "sanctions.csv", "balances.csv", "outcomes.csv", "filter_report.json")]


def cmd_heterogeneity(args, manifest: RunManifest):
    seed = _require_seed(args)
    manifest.master_seed = seed
    manifest.add_input(args.inp)
    manifest.add_input(args.designs)
    result = heterogeneity_analysis(
        read_outcomes(args.inp),
        read_designs(args.designs),
        group_by=args.group_by,
        wave=args.wave,
        clusters=args.clusters,
        seed=seed,
        frt_scope=args.frt_scope,
        grid_size=args.grid_size,
        permutations=args.permutations,
    )
    manifest.parameters = {
        "group_by": args.group_by,
        "wave": args.wave,
        "clusters": args.clusters,
        "frt_scope": args.frt_scope,
        "grid_size": args.grid_size,
        "permutations": args.permutations,
    }
    manifest.seeds = {"kmeans": derive_seed(seed, "kmeans"), "frt_pooled": derive_seed(seed, "frt", "pooled")}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, result)
    return [args.out]


def cmd_ols(args, manifest: RunManifest):
    manifest.add_input(args.inp)
    manifest.add_input(args.designs)
    result = game_level_ols(read_outcomes(args.inp), read_designs(args.designs), wave=args.wave)
    manifest.parameters = {"wave": args.wave}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, result)
    return [args.out]


def cmd_predict_build(args, manifest: RunManifest):
    manifest.add_input(args.outcomes)
    manifest.add_input(args.designs)
    records, dropped = build_matched_dataset(
        read_outcomes(args.outcomes), read_designs(args.designs), wave=args.wave
    )
    manifest.parameters = {"wave": args.wave, "records": len(records), "dropped": dropped}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_records(args.out, records)
    return [args.out]


def cmd_predict_fit(args, manifest: RunManifest):
    manifest.add_input(args.train)
    records = read_records(args.train)
    params = {"model": args.model, "interactions": args.interactions}
    alpha, l1 = args.alpha, args.l1
    if args.cv:
        seed = _require_seed(args)
        manifest.master_seed = seed
        raw = base_matrix(records)
        F = featurize_matrix(raw, Standardizer.fit(raw), args.interactions)
        fold_seed = derive_seed(seed, "cv")
        manifest.seeds["cv"] = fold_seed
        cv = cross_validate_grid(F, target(records), DEFAULT_ALPHAS, DEFAULT_L1_RATIOS, args.folds, fold_seed)
        alpha, l1 = cv.alpha, cv.l1_ratio
        params["cv"] = {"folds": args.folds, "rmse": cv.rmse, "table": cv.table}
    if args.model == "enet":
        model = fit_enet_model(records, alpha, l1, with_interactions=args.interactions)
    else:
        model = fit_ols_model(records, with_interactions=args.interactions)
    model.params.update(params)
    manifest.parameters = {k: v for k, v in params.items() if k != "cv"} | {"alpha": alpha, "l1_ratio": l1}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    return [args.out]


def _read_extra_predictions(path, records) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "config_id" not in rows[0]:
        raise UsageError(f"{path}: needs a config_id column and one column per forecaster")
    by_id = {r["config_id"]: r for r in rows}
    names = [c for c in rows[0] if c != "config_id"]
    missing = [r.config_id for r in records if r.config_id not in by_id]
    if missing:
        raise UsageError(f"{path}: no predictions for {missing}")
    return {n: np.array([float(by_id[r.config_id][n]) for r in records]) for n in names}


def cmd_predict_eval(args, manifest: RunManifest):
    seed = _require_seed(args)
    manifest.master_seed = seed
    manifest.add_input(args.model)
    manifest.add_input(args.validation)
    model = LinearModel.load(args.model)
    records = read_records(args.validation)
    extra = None
    if args.extra:
        manifest.add_input(args.extra)
        extra = _read_extra_predictions(args.extra, records)
    report = prediction_report(model, records, seed, repeats=args.repeats, resamples=args.resamples, extra_predictions=extra)
    manifest.parameters = {"repeats": args.repeats, "resamples": args.resamples}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, report)
    return [args.out]


def _write_table(path: Path, rows: list[dict]) -> None:
    columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_report(args, manifest: RunManifest):
    manifest.add_input(args.outcomes)
    manifest.add_input(args.designs)
    configs = read_designs(args.designs)
    summary = {"outcomes": outcome_summary(read_outcomes(args.outcomes), configs)}
    hetero_rows, prediction_rows, importance_rows = [], [], []
    summary["heterogeneity"] = {}
    for path in args.hetero or []:
        manifest.add_input(path)
        h = json.loads(Path(path).read_text())
        name = Path(path).stem
        summary["heterogeneity"][name] = {k: h[k] for k in ("group_by", "wave", "Q", "df", "p_q", "i_squared", "frt_max_p", "meta_mean")}
        hetero_rows.append({"source": name} | summary["heterogeneity"][name])
    summary["prediction"] = {}
    for path in args.prediction or []:
        manifest.add_input(path)
        p = json.loads(Path(path).read_text())
        name = Path(path).stem
        summary["prediction"][name] = {
            "model_kind": p["model_kind"],
            "rmse": p["rmse"],
            "r2": p["r2"],
            "baselines": p["baselines"],
            "rmse_ci": p["bootstrap"]["rmse_ci"]["model"],
        }
        prediction_rows.append(
            {"source": name, "model_kind": p["model_kind"], "rmse": p["rmse"], "r2": p["r2"]}
            | {f"baseline_{k}": v for k, v in p["baselines"].items()}
        )
        for rank, (feat, imp) in enumerate(p["importance"].items(), start=1):
            importance_rows.append(
                {"source": name, "rank": rank, "feature": feat, "ratio": imp["ratio"], "ci_low": imp["ci"][0], "ci_high": imp["ci"][1]}
            )
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "summary.json", summary)
    _write_table(out / "outcomes_summary.csv", summary["outcomes"])
    _write_table(out / "heterogeneity.csv", hetero_rows)
    _write_table(out / "prediction.csv", prediction_rows)
    _write_table(out / "importance.csv", importance_rows)
    return [out / n for n in ("summary.json", "outcomes_summary.csv", "heterogeneity.csv", "prediction.csv", "importance.csv")]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pgg", description="Public goods game simulation and analysis.")
    p.add_argument("--version", action="version", version=f"pgg {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_file(sp, default):
        sp.add_argument("--out", type=str, default=None, help=f"output file (default $PGG_OUTPUT_DIR/{default})")
        sp.set_defaults(out_default=default, out_is_dir=False)

    def out_dir(sp):
        sp.add_argument("--out-dir", type=str, default=None, help="output directory (default $PGG_OUTPUT_DIR)")
        sp.set_defaults(out_default="", out_is_dir=True)

    design = sub.add_parser("design", help="sample configurations")
    dsub = design.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in ("sobol", "random"):
        sp = dsub.add_parser(kind)
        sp.add_argument("--n", type=int, required=True)
        sp.add_argument("--seed", type=int)
        if kind == "sobol":
            sp.add_argument("--scramble", action=argparse.BooleanOptionalAction, default=True)
        else:
            sp.add_argument("--exclude", action="append", help="designs.csv whose configs are excluded")
        out_file(sp, f"designs_{kind}.csv")
        sp.set_defaults(func=cmd_design, command_name=f"design {kind}")

    sp = sub.add_parser("simulate", help="play both arms of every design with bot rosters")
    sp.add_argument("--designs", required=True)
    sp.add_argument("--agents", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int, default=1)
    sp.add_argument("--dropout-rate", type=float, default=0.0)
    sp.add_argument("--workers", type=int, default=1)
    out_dir(sp)
    sp.set_defaults(func=cmd_simulate, command_name="simulate")

    sp = sub.add_parser("ingest", help="read an external dataset through a schema map")
    sp.add_argument("--source", required=True)
    sp.add_argument("--schema", help="schema map JSON (default: canonical file names and columns)")
    sp.add_argument("--any-time-dropout", action="store_true")
    out_dir(sp)
    sp.set_defaults(func=cmd_ingest, command_name="ingest", seed=None)

    analyze = sub.add_parser("analyze", help="heterogeneity tests and game-level OLS")
    asub = analyze.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    sp = asub.add_parser("heterogeneity")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--designs", required=True)
    sp.add_argument("--group-by", choices=("experiment", "cluster"), default="experiment")
    sp.add_argument("--wave", choices=("learning", "validation"))
    sp.add_argument("--clusters", type=int, default=20)
    sp.add_argument("--frt-scope", choices=("pooled", "group"), default="pooled")
    sp.add_argument("--grid-size", type=int, default=300)
    sp.add_argument("--permutations", type=int, default=1000)
    sp.add_argument("--seed", type=int)
    out_file(sp, "hetero.json")
    sp.set_defaults(func=cmd_heterogeneity, command_name="analyze heterogeneity")
    sp = asub.add_parser("ols")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--designs", required=True)
    sp.add_argument("--wave", choices=("learning", "validation"))
    out_file(sp, "ols.json")
    sp.set_defaults(func=cmd_ols, command_name="analyze ols", seed=None)

    predict = sub.add_parser("predict", help="experiment-level prediction models")
    psub = predict.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    sp = psub.add_parser("build")
    sp.add_argument("--outcomes", required=True)
    sp.add_argument("--designs", required=True)
    sp.add_argument("--wave", choices=("learning", "validation"))
    out_file(sp, "records.csv")
    sp.set_defaults(func=cmd_predict_build, command_name="predict build", seed=None)
    sp = psub.add_parser("fit")
    sp.add_argument("--train", required=True)
    sp.add_argument("--model", choices=("enet", "ols"), default="enet")
    sp.add_argument("--alpha", type=float, default=0.07)
    sp.add_argument("--l1", type=float, default=0.15)
    sp.add_argument("--interactions", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--cv", action="store_true", help="choose alpha and l1 by grid cross-validation")
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--seed", type=int)
    out_file(sp, "model.json")
    sp.set_defaults(func=cmd_predict_fit, command_name="predict fit")
    sp = psub.add_parser("eval")
    sp.add_argument("--model", required=True)
    sp.add_argument("--validation", required=True)
    sp.add_argument("--extra", help="CSV of other forecasters' predictions by config_id")
    sp.add_argument("--repeats", type=int, default=30)
    sp.add_argument("--resamples", type=int, default=1000)
    sp.add_argument("--seed", type=int)
    out_file(sp, "report.json")
    sp.set_defaults(func=cmd_predict_eval, command_name="predict eval")

    sp = sub.add_parser("report", help="summarize outcomes, heterogeneity and prediction results")
    sp.add_argument("--outcomes", required=True)
    sp.add_argument("--designs", required=True)
    sp.add_argument("--hetero", action="append")
    sp.add_argument("--prediction", action="append")
    out_dir(sp)
    sp.set_defaults(func=cmd_report, command_name="report", seed=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out_is_dir:
        args.out_dir = _output_path(args.out_dir, "")
        target_path = args.out_dir
    else:
        args.out = _output_path(args.out, args.out_default)
        target_path = args.out
    manifest = RunManifest(command=args.command_name)
    manifest_path = _manifest_path(target_path, args.out_is_dir)
    try:
        outputs = args.func(args, manifest)
        for path in outputs:
            manifest.add_output(path)
        manifest.write(manifest_path)
    except Exception as exc:
        manifest.status = "error"
        manifest.error = {"error": type(exc).__name__, "message": str(exc)}
        try:
            manifest_path.parent.mkdir(parents=True, exist_ok=True)
            manifest.write(manifest_path)
        except OSError:
            pass
        sys.stderr.write(json.dumps(manifest.error) + "\n")
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
