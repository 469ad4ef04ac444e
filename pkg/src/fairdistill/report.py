"""Comparison tables: per-method means, spreads and relative change vs. the teacher."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError

TEACHER = "teacher"
METRICS = ("acc", "deo_a", "deo_m")
HIGHER_IS_BETTER = {"acc": True, "deo_a": False, "deo_m": False}
HEADERS = {"acc": "Accuracy (↑)", "deo_a": "DEO_A (↓)", "deo_m": "DEO_M (↓)"}


def round2(x: float) -> float:
    """Round half away from zero at two decimals, on the printed decimal value."""
    d = Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return float(d)


def relative_change(value: float, teacher: float) -> float:
    """100·(value − teacher)/teacher."""
    if teacher == 0:
        return 0.0 if value == 0 else float("inf") * np.sign(value)
    return 100.0 * (value - teacher) / teacher


def arrow(change: float) -> str:
    if change > 0:
        return "↑"
    if change < 0:
        return "↓"
    return "="


def improved(metric: str, change: float) -> Optional[bool]:
    if change == 0:
        return None
    return (change > 0) == HIGHER_IS_BETTER[metric]


@dataclass
class ResultRow:
    """One table row. Metric values are in percent."""

    method: str
    n_seeds: int
    acc_mean: float
    acc_std: float
    deo_a_mean: float
    deo_a_std: float
    deo_m_mean: float
    deo_m_std: float

    @classmethod
    def from_summary(cls, method: str, summary: dict, scale: float = 100.0) -> "ResultRow":
        """Build from a ``SeedSummary.summary()``-style dict of fractions."""
        return cls(method, int(summary.get("n_seeds", 1)),
                   *(scale * float(summary.get(f"{m}_{s}", 0.0) or 0.0)
                     for m in METRICS for s in ("mean", "std")))

    def mean(self, metric: str) -> float:
        return getattr(self, f"{metric}_mean")

    def std(self, metric: str) -> float:
        return getattr(self, f"{metric}_std")

    def changes(self, teacher: "ResultRow") -> Dict[str, float]:
        return {m: relative_change(self.mean(m), teacher.mean(m)) for m in METRICS}


@dataclass
class ComparisonTable:
    teacher: ResultRow
    rows: List[ResultRow]

    @classmethod
    def build(cls, rows: Sequence[ResultRow]) -> "ComparisonTable":
        teachers = [r for r in rows if r.method.lower() == TEACHER]
        if not teachers:
            raise ConfigurationError("report needs a teacher row (method 'teacher')")
        if len(teachers) > 1:
            raise ConfigurationError("more than one teacher row")
        return cls(teachers[0], [r for r in rows if r is not teachers[0]])

    def records(self) -> List[dict]:
        out = []
        for r in [self.teacher] + self.rows:
            rec = {"method": r.method, "n_seeds": r.n_seeds}
            ch = r.changes(self.teacher)
            for m in METRICS:
                rec[f"{m}_mean"] = round2(r.mean(m))
                rec[f"{m}_std"] = round2(r.std(m))
                rec[f"{m}_rel_change"] = round2(ch[m])
            out.append(rec)
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        recs = self.records()
        writer = csv.DictWriter(buf, fieldnames=list(recs[0]), lineterminator="\n")
        writer.writeheader()
        for rec in recs:
            writer.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in rec.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def cell(self, row: ResultRow, metric: str) -> str:
        value = f"{round2(row.mean(metric)):.2f}"
        if row is self.teacher:
            return value
        ch = relative_change(row.mean(metric), self.teacher.mean(metric))
        tag = improved(metric, ch)
        mark = "" if tag is None else ("+" if tag else "-")
        return f"{value} ({abs(round2(ch)):.2f} {arrow(ch)}{mark})"

    def to_text(self) -> str:
        header = ["Model"] + [HEADERS[m] for m in METRICS]
        body = [[r.method] + [self.cell(r, m) for m in METRICS] for r in [self.teacher] + self.rows]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
        fmt = lambda line: " | ".join(s.ljust(w) for s, w in zip(line, widths)).rstrip()
        rule = "-+-".join("-" * w for w in widths)
        lines = [fmt(header), rule, fmt(body[0]), rule] + [fmt(b) for b in body[1:]]
        lines.append("")
        lines.append("(x.xx ↑/↓) is the relative change vs. the teacher in percent; "
                     "+ marks an improvement, - a regression.")
        return "\n".join(lines) + "\n"


def load_result_rows(paths: Iterable) -> List[ResultRow]:
    """Read rows from summary CSVs (``method,n_seeds,acc_mean,...``) or JSON files.

    A JSON file holds either a single summary with a ``method`` key, or a
    ``{"rows": [...]}`` list of them. Values are fractions in [0, 1].
    """
    rows = []
    for path in paths:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read {path}: {exc}") from exc
        if path.suffix == ".json":
            doc = json.loads(text)
            items = doc["rows"] if isinstance(doc, dict) and "rows" in doc else [doc]
            for item in items:
                if "method" not in item:
                    raise FormatError(f"{path}: result entry without 'method'")
                rows.append(ResultRow.from_summary(item["method"], item))
        else:
            for rec in csv.DictReader(io.StringIO(text)):
                if "method" not in rec:
                    raise FormatError(f"{path}: CSV needs a 'method' column")
                rows.append(ResultRow.from_summary(rec["method"], rec))
    return rows
