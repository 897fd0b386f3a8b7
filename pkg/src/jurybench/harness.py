"""Run configuration files, single-run execution and the experiment matrix.

Backends are named by short strings:

* ``scripted:<preset>`` (``rigid``, ``moderate``, ``flexible``)
* ``llm:<model>`` or ``llm:<model>@<base_url>``
* ``replay:<run_dir>``
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .agents import load_preset
from .agents.llm import resolve_api_key
from .domain import (
    BackendKind,
    BackendSpec,
    CaseFile,
    Condition,
    ConfigError,
    DeliberationRecord,
    JurorId,
    Persona,
    RhoPolicy,
    RunConfig,
    SelectorPolicy,
    load_case_file,
    load_defaults,
    load_personas,
)
from .engine import run_deliberation
from .metrics import AggregateRow, RunMetrics, aggregate, compute_run_metrics
from .storage import EVENTS_FILE, EventWriter, read_record, run_dir, write_manifest
from .tables import format_table, write_figure_csvs

logger = logging.getLogger(__name__)

DEFAULT_LLM_BASE_URL = "https://api.openai.com/v1"
AGGREGATE_FILE = "aggregate.txt"
PROGRESS_FILE = "progress.log"
FIGURES_DIR = "figures"

# run-setting keys accepted in config files (and matrix ``settings``)
RUN_KEYS = (
    "backend",
    "condition",
    "seed",
    "temperature",
    "max_turns",
    "vote_interval",
    "patience_rounds",
    "selector_policy",
    "canonical_flip_order",
    "rho_undefined_policy",
)


def parse_backend(text: str) -> BackendSpec:
    if not isinstance(text, str) or ":" not in text:
        raise ConfigError("backend", f"expected 'scripted:<preset>', 'llm:<model>[@url]' or 'replay:<dir>', got {text!r}")
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    rest = rest.strip()
    if not rest:
        raise ConfigError("backend", f"missing value after {kind!r}")
    if kind == "scripted":
        return BackendSpec(BackendKind.SCRIPTED, scripted_params=load_preset(rest))
    if kind == "llm":
        model, _, url = rest.partition("@")
        return BackendSpec(BackendKind.LLM_CHAT, model_name=model, endpoint=url or DEFAULT_LLM_BASE_URL)
    if kind == "replay":
        try:
            source = read_record(rest)
        except FileNotFoundError as exc:
            raise ConfigError("backend", f"replay source not found: {exc.filename}") from None
        return BackendSpec(BackendKind.REPLAY, source_record=source)
    raise ConfigError("backend", f"unknown backend kind {kind!r}")


def _enum(cls, value: Any, name: str):
    try:
        return cls.parse(value)
    except (ValueError, AttributeError):
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(name, f"invalid value {value!r}; choose from {choices}") from None


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected an integer, got {value!r}") from None


def build_run_config(settings: Mapping[str, Any], backend: BackendSpec | None = None) -> RunConfig:
    """Validate a settings mapping (config-file keys) into a RunConfig.

    Missing keys take the shipped defaults; unknown keys are rejected.
    """
    unknown = sorted(set(settings) - set(RUN_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown setting")
    d = {**load_defaults(), **{k: v for k, v in settings.items() if v is not None}}
    if backend is None:
        if "backend" not in d:
            raise ConfigError("backend", "required")
        backend = parse_backend(d["backend"])
    if "condition" not in d:
        raise ConfigError("condition", "required")
    try:
        temperature = float(d["temperature"])
    except (TypeError, ValueError):
        raise ConfigError("temperature", f"expected a number, got {d['temperature']!r}") from None
    try:
        order = tuple(JurorId(j) for j in d["canonical_flip_order"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("canonical_flip_order", str(exc)) from None
    return RunConfig(
        backend_spec=backend,
        condition=_enum(Condition, d["condition"], "condition"),
        seed=_int(d.get("seed", 0), "seed"),
        temperature=temperature,
        max_turns=_int(d["max_turns"], "max_turns"),
        vote_interval=_int(d["vote_interval"], "vote_interval"),
        patience_rounds=_int(d["patience_rounds"], "patience_rounds"),
        selector_policy=_enum(SelectorPolicy, d["selector_policy"], "selector_policy"),
        canonical_flip_order=order,
        rho_undefined_policy=_enum(RhoPolicy, d["rho_undefined_policy"], "rho_undefined_policy"),
    )


def load_yaml_file(path: str | Path) -> dict[str, Any]:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path} must contain a mapping")
    return raw


def check_credentials(spec: BackendSpec) -> None:
    """Fail before any turn if an LLM backend has no API key."""
    if spec.kind is BackendKind.LLM_CHAT:
        resolve_api_key()


@dataclass(frozen=True)
class RunResult:
    directory: Path
    record: DeliberationRecord
    metrics: RunMetrics


def execute_run(
    config: RunConfig,
    directory: str | Path,
    personas: Sequence[Persona] | None = None,
    case_file: CaseFile | None = None,
    **engine_kwargs: Any,
) -> RunResult:
    """Run one deliberation, streaming events to disk, then write the manifest."""
    personas = personas if personas is not None else load_personas()
    case_file = case_file if case_file is not None else load_case_file()
    check_credentials(config.backend_spec)
    directory = Path(directory)
    with EventWriter(directory / EVENTS_FILE) as writer:
        record = run_deliberation(config, personas, case_file, sink=writer, **engine_kwargs)
    metrics = compute_run_metrics(record, personas, case_file)
    write_manifest(directory, record, metrics)
    return RunResult(directory, record, metrics)


# ---------------------------------------------------------------------------
# Experiment matrix


@dataclass(frozen=True)
class MatrixCell:
    backend_spec: BackendSpec
    condition: Condition
    replications: int = 3
    base_seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications", f"must be >= 1, got {self.replications}")

    def seeds(self) -> list[int]:
        return [self.base_seed + k for k in range(self.replications)]


@dataclass(frozen=True)
class MatrixSpec:
    cells: tuple[MatrixCell, ...]
    output_dir: Path
    settings: Mapping[str, Any] = field(default_factory=dict)
    workers: int = 1

    def tasks(self) -> list[tuple[RunConfig, Path]]:
        """Every (config, run directory) in matrix-file order; seed = base_seed + k."""
        out = []
        for cell in self.cells:
            for k, seed in enumerate(cell.seeds(), 1):
                cfg = build_run_config(
                    {**self.settings, "condition": cell.condition.value, "seed": seed}, backend=cell.backend_spec
                )
                out.append((cfg, run_dir(self.output_dir, cell.backend_spec.label, cell.condition.value, k)))
        return out


_PROBE_BACKEND = BackendSpec(BackendKind.SCRIPTED, scripted_params=load_preset("rigid"))


def parse_matrix(raw: Mapping[str, Any], output_dir: str | Path | None = None) -> MatrixSpec:
    """Build a MatrixSpec from a mapping.

    Either list ``cells`` (each with backend, condition, replications,
    base_seed) or give ``backends`` and ``conditions`` for a full cross
    product sharing top-level ``replications`` and ``base_seed``.
    """
    known = {"cells", "backends", "conditions", "replications", "base_seed", "output_dir", "workers", "settings"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown matrix key")
    settings = dict(raw.get("settings") or {})
    for bad in ("backend", "condition", "seed"):
        if bad in settings:
            raise ConfigError(f"settings.{bad}", "set per cell, not in shared settings")
    # validate shared settings once, up front
    build_run_config({**settings, "condition": "baseline"}, backend=_PROBE_BACKEND)
    reps = _int(raw.get("replications", 3), "replications")
    base_seed = _int(raw.get("base_seed", 0), "base_seed")
    cells: list[MatrixCell] = []
    if "cells" in raw:
        for i, c in enumerate(raw["cells"] or []):
            if not isinstance(c, Mapping):
                raise ConfigError(f"cells[{i}]", "must be a mapping")
            for key in ("backend", "condition"):
                if key not in c:
                    raise ConfigError(f"cells[{i}].{key}", "required")
            cells.append(
                MatrixCell(
                    parse_backend(c["backend"]),
                    _enum(Condition, c["condition"], f"cells[{i}].condition"),
                    _int(c.get("replications", reps), f"cells[{i}].replications"),
                    _int(c.get("base_seed", base_seed), f"cells[{i}].base_seed"),
                )
            )
    else:
        backends = raw.get("backends")
        if not backends:
            raise ConfigError("backends", "give 'cells' or a non-empty 'backends' list")
        conditions = raw.get("conditions") or [c.value for c in Condition]
        specs = [parse_backend(b) for b in backends]
        for spec in specs:
            for cond in conditions:
                cells.append(MatrixCell(spec, _enum(Condition, cond, "conditions"), reps, base_seed))
    if not cells:
        raise ConfigError("cells", "matrix has no cells")
    out = output_dir if output_dir is not None else raw.get("output_dir", "results")
    return MatrixSpec(tuple(cells), Path(out), settings, _int(raw.get("workers", 1), "workers"))


def load_matrix(path: str | Path, output_dir: str | Path | None = None) -> MatrixSpec:
    return parse_matrix(load_yaml_file(path), output_dir)


def _run_task(task: tuple[RunConfig, Path]) -> RunMetrics:
    cfg, directory = task
    return execute_run(cfg, directory).metrics


@dataclass(frozen=True)
class MatrixResult:
    runs: tuple[RunMetrics, ...]
    rows: tuple[AggregateRow, ...]
    table: str


def run_matrix(spec: MatrixSpec, workers: int | None = None) -> MatrixResult:
    """Execute every run, then write the aggregate table and figure CSVs.

    Runs are independent, so they may execute in parallel; results are
    collected back into matrix-file order before aggregation.
    """
    tasks = spec.tasks()
    for cfg, _ in tasks:
        check_credentials(cfg.backend_spec)
    workers = max(1, workers or spec.workers)
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    progress = (spec.output_dir / PROGRESS_FILE).open("a", encoding="utf-8")
    results: list[RunMetrics | None] = [None] * len(tasks)

    def log(i: int, m: RunMetrics) -> None:
        verdict = m.verdict.value if m.verdict is not None else f"ABORTED({m.termination_reason})"
        progress.write(
            f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {tasks[i][1].as_posix()} seed={m.seed} "
            f"verdict={verdict} turns={m.total_turns} changes={m.num_changes}\n"
        )
        progress.flush()

    try:
        if workers == 1:
            for i, task in enumerate(tasks):
                results[i] = _run_task(task)
                log(i, results[i])
        else:
            with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1, len(tasks))) as pool:
                futures = {pool.submit(_run_task, task): i for i, task in enumerate(tasks)}
                for fut in as_completed(futures):
                    i = futures[fut]
                    results[i] = fut.result()
                    log(i, results[i])
    finally:
        progress.close()

    runs = tuple(r for r in results if r is not None)
    rows = tuple(aggregate(runs))
    table = format_table(rows)
    (spec.output_dir / AGGREGATE_FILE).write_text(table, encoding="utf-8")
    write_figure_csvs(rows, spec.output_dir / FIGURES_DIR)
    return MatrixResult(runs, rows, table)
