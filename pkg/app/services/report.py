"""
Report rendering: aligned text table, CSV and a metrics JSON document.
"""
import io
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from app.core.errors import DataError
from app.core.storage import atomic_write_text, canonical_json
from app.services.metrics import MetricReport, MetricRow
from app.services.tasks import TaskKind

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["model", "task", "H-ACC", "S-ACC", "NGEO", "%IF", "%IV", "trials", "unresolved"]
TEXT_COLUMNS = {"model", "task"}
MISSING = "-"

REPORT_TEXT_FILE = "report.txt"
REPORT_CSV_FILE = "report.csv"
METRICS_JSON_FILE = "metrics.json"


def _fmt(value: Optional[float], digits: int) -> str:
    return MISSING if value is None else f"{value:.{digits}f}"


def report_cells(row: MetricRow) -> Dict[str, str]:
    return {
        "model": row.label,
        "task": row.task.value,
        "H-ACC": _fmt(row.h_acc, 1),
        "S-ACC": _fmt(row.s_acc, 1),
        "NGEO": _fmt(row.ngeo, 2),
        "%IF": _fmt(row.if_rate, 2),
        "%IV": _fmt(row.iv_rate, 2),
        "trials": str(row.trials),
        "unresolved": str(row.unresolved),
    }


def report_frame(report: MetricReport) -> pd.DataFrame:
    return pd.DataFrame([report_cells(row) for row in report.rows], columns=REPORT_COLUMNS)


def render_table(report: MetricReport) -> str:
    """Plain-text table; text columns left-aligned, numbers right-aligned."""
    cells: List[Dict[str, str]] = [report_cells(row) for row in report.rows]
    widths = {column: max([len(column)] + [len(cell[column]) for cell in cells]) for column in REPORT_COLUMNS}

    def line(values: Dict[str, str]) -> str:
        parts = [
            values[column].ljust(widths[column]) if column in TEXT_COLUMNS else values[column].rjust(widths[column])
            for column in REPORT_COLUMNS
        ]
        return "  ".join(parts).rstrip()

    lines = [line({column: column for column in REPORT_COLUMNS})]
    lines.append("  ".join("-" * widths[column] for column in REPORT_COLUMNS))
    lines.extend(line(cell) for cell in cells)
    return "\n".join(lines) + "\n"


def render_csv(report: MetricReport) -> str:
    buffer = io.StringIO()
    report_frame(report).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def metrics_document(report: MetricReport, generated_at: Optional[datetime] = None) -> Dict:
    generated_at = generated_at or datetime.now(timezone.utc)
    return {
        "generated_at": generated_at.isoformat(),
        "rows": [row.to_dict() for row in report.rows],
    }


def write_report(report: MetricReport, output_dir: Path, generated_at: Optional[datetime] = None) -> Dict[str, Path]:
    output_dir = Path(output_dir)
    paths = {
        "table": output_dir / REPORT_TEXT_FILE,
        "csv": output_dir / REPORT_CSV_FILE,
        "metrics": output_dir / METRICS_JSON_FILE,
    }
    atomic_write_text(paths["table"], render_table(report))
    atomic_write_text(paths["csv"], render_csv(report))
    atomic_write_text(paths["metrics"], canonical_json(metrics_document(report, generated_at)) + "\n")
    logger.info("Report written to %s", output_dir)
    return paths


def load_metrics(path: Path) -> MetricReport:
    """Rebuild a report from a metrics JSON document."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        rows = []
        for payload in document["rows"]:
            payload = dict(payload)
            payload["task"] = TaskKind(payload["task"])
            rows.append(MetricRow(**payload))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"Cannot read metrics file {path}: {exc}") from exc
    return MetricReport(rows)
