"""Report emission: versioned JSON (``report_v1``) or flat CSV."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import BadParams, IoFailure
from .scenario import EvalReport

SCHEMA_VERSION = "report_v1"
CSV_COLUMNS = ("scenario", "attack", "n", "accuracy")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": SCHEMA_VERSION,
    "type": "object",
    "required": ["schema", "scenario", "seed", "config", "rows"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "scenario": {"type": "string"},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "split": {"type": "object"},
        "training": {"type": "object"},
        "timestamps": {"type": "object"},
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["scenario", "attack", "n", "correct", "accuracy"],
                "additionalProperties": False,
                "properties": {
                    "scenario": {"type": "string"},
                    "attack": {"type": "string"},
                    "n": {"type": "integer", "minimum": 1},
                    "correct": {"type": "integer", "minimum": 0},
                    "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
    },
}


def render_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([r.scenario, r.attack, r.n, repr(r.accuracy)])
    return buf.getvalue()


def emit_report(report: EvalReport, path, format: str = "json") -> None:
    """Write `report` to `path`; field order is fixed so equal reports give equal bytes."""
    if format == "json":
        text = render_json(report)
    elif format == "csv":
        text = render_csv(report)
    else:
        raise BadParams(f"report format must be json or csv, got {format!r}")
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc


def read_report(path) -> EvalReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA_VERSION:
        raise BadParams(f"{path}: not a {SCHEMA_VERSION} report")
    return EvalReport.from_dict(doc)
