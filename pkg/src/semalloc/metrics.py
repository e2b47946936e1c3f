"""Evaluation quantities and the per-figure CSV files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

from .allocator import AllocationResult

SATISFIED_ONLY = "satisfied_only"
ALL_SERVED = "all_served"
OK = "ok"

FIG1_FIELDS = ("bandwidth_hz", "method", "seed", "satisfied_count", "status")
FIG2_FIELDS = ("user_id", "method", "xi", "xi_min", "xi_max", "satisfied")
FIG3_FIELDS = ("bandwidth_hz", "method", "seed", "avg_similarity", "status")


@dataclass(frozen=True)
class SweepRow:
    bandwidth_hz: float
    method: str
    seed: int
    satisfied_count: int | None
    average_similarity: float | None
    objective_value: float | None
    runtime_ms: float
    status: str = OK

    def sort_key(self):
        return (self.method, self.bandwidth_hz, self.seed)


class ReportRow(NamedTuple):
    user_id: int
    method: str
    xi: float
    xi_min: float
    xi_max: float
    satisfied: bool


def satisfied_count(result: AllocationResult) -> int:
    return sum(1 for a in result.per_user if a.satisfied)


def average_similarity(result: AllocationResult, scope: str = SATISFIED_ONLY) -> float | None:
    """Mean similarity over satisfied users (default) or all served users; None if empty."""
    if scope == SATISFIED_ONLY:
        xs = [a.similarity for a in result.per_user if a.satisfied]
    elif scope == ALL_SERVED:
        xs = [a.similarity for a in result.per_user if a.served]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return sum(xs) / len(xs) if xs else None


def per_user_report(result: AllocationResult, users) -> list[ReportRow]:
    by_id = {u.id: u for u in users}
    if sorted(by_id) != sorted(a.user_id for a in result.per_user):
        raise ValueError("result and users disagree on user ids")
    rows = []
    for a in result.per_user:
        u = by_id[a.user_id]
        xi = a.similarity if a.served else 0.0
        rows.append(ReportRow(a.user_id, result.method, xi, u.xi_min, u.xi_max, a.satisfied))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _write(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def fig1_csv(rows) -> str:
    rows = sorted(rows, key=SweepRow.sort_key)
    return _write(FIG1_FIELDS, [(r.bandwidth_hz, r.method, r.seed, r.satisfied_count, r.status)
                                for r in rows])


def fig3_csv(rows) -> str:
    rows = sorted(rows, key=SweepRow.sort_key)
    return _write(FIG3_FIELDS, [(r.bandwidth_hz, r.method, r.seed, r.average_similarity, r.status)
                                for r in rows])


def fig2_csv(report_rows) -> str:
    return _write(FIG2_FIELDS, report_rows)


def read_csv_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
