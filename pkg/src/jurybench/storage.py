"""On-disk layout: an append-only ``events.jsonl`` plus a ``manifest.json`` per run.

Layout under an output root::

    <out>/<model>/<condition>/run_<k>/events.jsonl
    <out>/<model>/<condition>/run_<k>/manifest.json

Each event is flushed as soon as it happens, so an interrupted run leaves a
readable prefix. The manifest (record header plus metrics) is written last.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Iterator, Mapping

from .domain import (
    DataError,
    DeliberationRecord,
    Event,
    event_from_dict,
    event_to_dict,
    record_from_parts,
    record_header_to_dict,
)
from .metrics import RunMetrics

EVENTS_FILE = "events.jsonl"
MANIFEST_FILE = "manifest.json"


class RecordParseError(DataError):
    def __init__(self, path: Path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", label).strip("_") or "model"


def run_dir(out: str | Path, model: str, condition: str, k: int) -> Path:
    return Path(out) / safe_name(model) / condition / f"run_{k}"


def dump_event(event: Event) -> str:
    return json.dumps(event_to_dict(event), ensure_ascii=False, sort_keys=True)


class EventWriter:
    """Append-only JSON-lines sink; usable as the engine's event sink."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")

    def __call__(self, event: Event) -> None:
        self._fh.write(dump_event(event) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> EventWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_events(path: str | Path) -> Iterator[Event]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            try:
                yield event_from_dict(raw)
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordParseError(path, lineno, f"invalid event ({exc})") from None


def read_events(path: str | Path) -> list[Event]:
    return list(iter_events(path))


def manifest_dict(record: DeliberationRecord, metrics: RunMetrics) -> dict[str, Any]:
    return {"record": record_header_to_dict(record), "metrics": metrics.to_dict()}


def write_manifest(directory: str | Path, record: DeliberationRecord, metrics: RunMetrics) -> Path:
    path = Path(directory) / MANIFEST_FILE
    path.write_text(json.dumps(manifest_dict(record, metrics), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> dict[str, Any]:
    path = Path(directory) / MANIFEST_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RecordParseError(path, exc.lineno, f"invalid JSON ({exc.msg})") from None


def read_record(directory: str | Path) -> DeliberationRecord:
    """Rebuild a record from a run directory's manifest header and event stream."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    return record_from_parts(manifest["record"], read_events(directory / EVENTS_FILE))


def read_metrics(directory: str | Path) -> RunMetrics:
    return RunMetrics.from_dict(read_manifest(directory)["metrics"])


def _natural_key(path: Path) -> list:
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.as_posix())]


def find_run_dirs(root: str | Path) -> list[Path]:
    return sorted((p.parent for p in Path(root).rglob(MANIFEST_FILE)), key=_natural_key)


def load_manifest_metrics(root: str | Path) -> list[RunMetrics]:
    return [read_metrics(d) for d in find_run_dirs(root)]


def metrics_equal(a: Mapping[str, Any], b: Mapping[str, Any]) -> bool:
    return json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
