"""Command-line entry point: ``jurybench <subcommand>``.

Exit status: 0 for a completed run (hung juries included), 1 for invalid
configuration or input, 2 for an aborted run or a metrics drift.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .domain import (
    Condition,
    ConfigError,
    DataError,
    JurorId,
    condition_personas,
    load_case_file,
    load_personas,
)
from .harness import (
    FIGURES_DIR,
    build_run_config,
    execute_run,
    load_matrix,
    load_yaml_file,
    run_matrix,
)
from .metrics import aggregate, compute_run_metrics
from .prompts import assemble_system_prompt, assemble_vote_prompt
from .storage import (
    find_run_dirs,
    load_manifest_metrics,
    metrics_equal,
    read_manifest,
    read_record,
    run_dir,
)
from .tables import format_table, write_figure_csvs

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORTED = 2


def _prompt_text(juror: str, condition: str, vote: bool = False) -> str:
    if vote:
        return assemble_vote_prompt()
    cond = Condition.parse(condition)
    jid = JurorId(juror)
    persona = next(p for p in condition_personas(load_personas(), cond) if p.id == jid)
    return assemble_system_prompt(persona, load_case_file(), cond).system_prompt


def cmd_run(args: argparse.Namespace) -> int:
    if args.show_prompt:
        print(_prompt_text(args.show_prompt, args.condition or "baseline"))
        return EXIT_OK
    settings = load_yaml_file(args.config) if args.config else {}
    overrides = {
        "backend": args.backend,
        "condition": args.condition,
        "seed": args.seed,
        "temperature": args.temperature,
        "max_turns": args.max_turns,
        "vote_interval": args.vote_interval,
        "patience_rounds": args.patience_rounds,
        "selector_policy": args.selector,
        "rho_undefined_policy": args.rho_policy,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    cfg = build_run_config(settings)
    directory = Path(args.run_dir) if args.run_dir else run_dir(args.out, cfg.backend_spec.label, cfg.condition.value, cfg.seed)
    result = execute_run(cfg, directory)
    rec = result.record
    if rec.aborted:
        term = rec.termination
        print(f"ABORTED ({term.reason}) after {rec.total_turns} turns: {term.detail}", file=sys.stderr)
        print(f"partial record: {directory}", file=sys.stderr)
        return EXIT_ABORTED
    print(f"verdict: {rec.verdict.value}")
    print(f"turns: {rec.total_turns}")
    print(f"vote changes: {len(rec.vote_changes)}")
    print(f"record: {directory}")
    return EXIT_OK


def cmd_matrix(args: argparse.Namespace) -> int:
    spec = load_matrix(args.matrix, output_dir=args.out)
    result = run_matrix(spec, workers=args.workers)
    print(result.table, end="")
    aborted = sum(m.aborted for m in result.runs)
    if aborted:
        print(f"{aborted} aborted run(s) excluded from the table", file=sys.stderr)
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    record = read_record(args.run_dir)
    metrics = compute_run_metrics(record, load_personas(), load_case_file()).to_dict()
    print(json.dumps(metrics, indent=2, ensure_ascii=False))
    stored = read_manifest(args.run_dir).get("metrics")
    if stored is not None and not metrics_equal(stored, metrics):
        print("recomputed metrics differ from the stored manifest", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace) -> int:
    if not find_run_dirs(args.results):
        raise DataError(f"no run manifests under {args.results}")
    rows = aggregate(load_manifest_metrics(args.results))
    print(format_table(rows), end="")
    if args.csv:
        write_figure_csvs(rows, args.csv)
    return EXIT_OK


def cmd_export_figures(args: argparse.Namespace) -> int:
    if not find_run_dirs(args.results):
        raise DataError(f"no run manifests under {args.results}")
    rows = aggregate(load_manifest_metrics(args.results))
    dest = Path(args.dest) if args.dest else Path(args.results) / FIGURES_DIR
    for path in write_figure_csvs(rows, dest):
        print(path)
    return EXIT_OK


def cmd_prompts_show(args: argparse.Namespace) -> int:
    print(_prompt_text(args.juror, args.condition, vote=args.vote))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jurybench", description="Twelve-juror deliberation benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one deliberation")
    run.add_argument("--config", help="YAML run configuration")
    run.add_argument("--backend", help="scripted:<preset> | llm:<model>[@url] | replay:<run_dir>")
    run.add_argument("--condition", help="baseline | no_initial_vote | open_minded")
    run.add_argument("--seed", type=int)
    run.add_argument("--temperature", type=float)
    run.add_argument("--max-turns", type=int)
    run.add_argument("--vote-interval", type=int)
    run.add_argument("--patience-rounds", type=int)
    run.add_argument("--selector", help="dissent_priority_rotation | round_robin | model_driven")
    run.add_argument("--rho-policy", help="skip | report_one")
    run.add_argument("--out", default="results", help="output root (default: results)")
    run.add_argument("--run-dir", help="explicit run directory (overrides --out layout)")
    run.add_argument("--show-prompt", metavar="JUROR", help="print a juror's system prompt and exit")
    run.set_defaults(func=cmd_run)

    matrix = sub.add_parser("matrix", help="run an experiment matrix")
    matrix.add_argument("matrix", help="YAML matrix file")
    matrix.add_argument("--out", help="output root (overrides the file)")
    matrix.add_argument("--workers", type=int, help="parallel runs")
    matrix.set_defaults(func=cmd_matrix)

    metrics = sub.add_parser("metrics", help="recompute a run's metrics from its event stream")
    metrics.add_argument("run_dir")
    metrics.set_defaults(func=cmd_metrics)

    agg = sub.add_parser("aggregate", help="aggregate all runs under a results directory")
    agg.add_argument("results")
    agg.add_argument("--csv", help="also write figure CSVs to this directory")
    agg.set_defaults(func=cmd_aggregate)

    fig = sub.add_parser("export-figures", help="write plot-ready CSVs")
    fig.add_argument("results")
    fig.add_argument("--dest", help="destination directory (default: <results>/figures)")
    fig.set_defaults(func=cmd_export_figures)

    prompts = sub.add_parser("prompts", help="inspect prompts")
    psub = prompts.add_subparsers(dest="prompts_command", required=True)
    show = psub.add_parser("show", help="print a juror's system prompt")
    show.add_argument("--juror", default="Juror_8")
    show.add_argument("--condition", default="baseline")
    show.add_argument("--vote", action="store_true", help="print the vote prompt instead")
    show.set_defaults(func=cmd_prompts_show)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
