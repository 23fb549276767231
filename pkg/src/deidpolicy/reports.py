"""File formats for pipeline outputs: search tables, decisions, risk reports,
summaries, and the reproducibility manifest.

All writers are deterministic: rows are emitted in sorted key order, floats
are formatted with a fixed rule, and no timestamps are recorded, so reruns
with the same manifest produce byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path

from . import __version__
from .engine import RNG_ALGORITHM
from .errors import ValidationError
from .planner import EvaluationReport, ReleaseDecision, SearchTable


def fmt_float(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".10g")


def write_search_table_json(table: SearchTable, path):
    doc = table.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_search_table_json(path) -> SearchTable:
    with open(path, "r", encoding="utf-8") as fh:
        return SearchTable.from_dict(json.load(fh))


def write_search_tables_csv(tables: dict[str, SearchTable], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "policy", "min_volume"])
        for scope in sorted(tables):
            table = tables[scope]
            for code in sorted(table.entries):
                vol = table.entries[code]
                w.writerow([scope, code, "" if vol is None else vol])


def write_decisions_csv(decisions: list[ReleaseDecision], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "week_start", "decision", "statistic", "source"])
        for d in sorted(decisions, key=lambda d: (d.fips, d.week_start)):
            w.writerow([d.fips, d.week_start.isoformat(), d.decision,
                        d.selection_statistic, d.source])


def read_decisions_csv(path) -> list[ReleaseDecision]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"fips", "week_start", "decision", "statistic", "source"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise ValidationError(f"decisions file missing columns {sorted(needed)}")
        for row in reader:
            out.append(ReleaseDecision(
                fips=row["fips"],
                week_start=dt.date.fromisoformat(row["week_start"]),
                decision=row["decision"],
                selection_statistic=int(row["statistic"]),
                source=row["source"],
            ))
    return out


RISK_REPORT_COLUMNS = [
    "fips", "release_date", "policy", "k", "mean", "lower", "upper",
    "meets_threshold", "n_evaluable",
]


def write_risk_report_csv(reports: list[EvaluationReport], k: int, path):
    """Per-release risk rows across counties, in the documented schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RISK_REPORT_COLUMNS)
        for report in sorted(reports, key=lambda r: r.fips):
            for row in report.rows:
                w.writerow([
                    row.fips, row.date.isoformat(), row.policy, k,
                    fmt_float(row.mean), fmt_float(row.lower), fmt_float(row.upper),
                    "" if row.meets is None else str(bool(row.meets)).lower(),
                    row.n_evaluable,
                ])


def write_county_summary_csv(reports: list[EvaluationReport], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "schedule", "n_releases", "n_meeting", "proportion"])
        for report in sorted(reports, key=lambda r: r.fips):
            w.writerow([
                report.fips, report.schedule, report.n_releases,
                report.n_meeting, fmt_float(report.proportion),
            ])


def write_category_summary_csv(rows: list[dict], path):
    """Category averages with quantile ranges across member counties."""
    cols = ["category", "schedule", "policy_mode", "n_counties",
            "mean_proportion", "lower", "upper"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row["category"], row["schedule"], row["policy_mode"],
                        row["n_counties"], fmt_float(row["mean_proportion"]),
                        fmt_float(row["lower"]), fmt_float(row["upper"])])


def write_timeseries_csv(rows: list[tuple], path):
    """Plot-ready long format: fips, date, metric, value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "date", "metric", "value"])
        for fips, date, metric, value in rows:
            w.writerow([fips, date.isoformat(), metric,
                        value if isinstance(value, str) else fmt_float(value)])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, settings: dict, input_paths: dict):
    """Everything needed to reproduce the run bit-exactly."""
    doc = {
        "artifact": {"name": "deidpolicy", "version": __version__},
        "command": command,
        "rng": RNG_ALGORITHM,
        "stream_derivation": "key=seedseq[seed,fips]; counter=[0,stream,replicate,0]",
        "settings": settings,
        "inputs": {
            name: {"path": str(p), "sha256": file_digest(p)}
            for name, p in sorted(input_paths.items()) if p is not None
        },
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
