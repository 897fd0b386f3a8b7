"""Text and CSV renderings of aggregate rows."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .domain import Condition
from .metrics import AggregateRow

TABLE_COLUMNS = ("Model", "Condition", "N", "Hung", "NG", "G", "Avg turns", "Avg flips", "rho")


def _cells(row: AggregateRow) -> list[str]:
    return [
        row.model,
        row.condition,
        str(row.n),
        str(row.hung),
        str(row.not_guilty),
        str(row.guilty),
        f"{row.avg_turns:.1f}",
        f"{row.avg_flips:.1f}",
        f"{row.rho:.2f}" if row.rho is not None else "n/a",
    ]


def format_table(rows: Sequence[AggregateRow]) -> str:
    """Aligned plain-text table: text columns left-aligned, numbers right-aligned."""
    body = [list(TABLE_COLUMNS)] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in body) for i in range(len(TABLE_COLUMNS))]
    out = []
    for k, line in enumerate(body):
        parts = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths))]
        out.append("  ".join(parts).rstrip())
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def figure_csvs(rows: Sequence[AggregateRow]) -> dict[str, str]:
    """File name -> CSV text for the plot-ready figure data."""
    out = {
        "verdicts_by_cell.csv": _csv_text(
            ("model", "condition", "n", "hung", "not_guilty", "guilty"),
            [(r.model, r.condition, r.n, r.hung, r.not_guilty, r.guilty) for r in rows],
        ),
        "mean_changes_by_cell.csv": _csv_text(
            ("model", "condition", "n", "mean_changes", "sd_changes"),
            [(r.model, r.condition, r.n, repr(r.avg_flips), repr(r.sd_flips)) for r in rows],
        ),
        "mean_turns_by_cell.csv": _csv_text(
            ("model", "condition", "n", "mean_turns", "sd_turns"),
            [(r.model, r.condition, r.n, repr(r.avg_turns), repr(r.sd_turns)) for r in rows],
        ),
    }
    baseline = {r.model: r for r in rows if r.condition == Condition.BASELINE.value}
    ablation = []
    for r in rows:
        base = baseline.get(r.model)
        ablation.append(
            (
                r.model,
                r.condition,
                repr(r.avg_flips),
                repr(r.avg_turns),
                repr(r.avg_flips - base.avg_flips) if base else "",
                repr(r.avg_turns - base.avg_turns) if base else "",
                r.not_guilty - base.not_guilty if base else "",
            )
        )
    out["ablation.csv"] = _csv_text(
        ("model", "condition", "mean_changes", "mean_turns", "delta_changes_vs_baseline",
         "delta_turns_vs_baseline", "delta_not_guilty_vs_baseline"),
        ablation,
    )
    return out


def write_figure_csvs(rows: Sequence[AggregateRow], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in figure_csvs(rows).items():
        p = out_dir / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
