"""Plain-text and JSON reports.

Text grammar::

    report  := header* block*
    header  := "# " key ": " value NEWLINE
    block   := "[" name "]" NEWLINE csv_header NEWLINE csv_row* (blank line)

Cells are comma-separated with "." decimals and no thousands separators;
floats use the shortest repr that round-trips.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DataReuseError

_HEADER = re.compile(r"^# ([A-Za-z0-9_.\-]+): (.*)$")
_BLOCK = re.compile(r"^\[([A-Za-z0-9_.\-]+)\]$")


class ReportFormatError(DataReuseError, ValueError):
    pass


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v == 0:
            return "0.0"
        return repr(v)
    return str(value)


def parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *cells) -> None:
        if len(cells) != len(self.columns):
            raise ValueError(f"table {self.name} expects {len(self.columns)} cells, got {len(cells)}")
        self.rows.append(list(cells))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


@dataclass
class Report:
    meta: dict[str, str] = field(default_factory=dict)
    tables: list[Table] = field(default_factory=list)

    def table(self, name: str, columns: Sequence[str]) -> Table:
        t = Table(name, list(columns))
        self.tables.append(t)
        return t

    def get(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_text(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}: {format_cell(v)}\n")
        for t in self.tables:
            buf.write(f"\n[{t.name}]\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(t.columns)
            for row in t.rows:
                w.writerow([format_cell(c) for c in row])
        return buf.getvalue()

    def to_obj(self) -> str:
        def cell(c):
            if isinstance(c, (float, np.floating)) and not math.isfinite(float(c)):
                return format_cell(c)
            if isinstance(c, np.generic):
                return c.item()
            return c

        obj = {
            "meta": {k: format_cell(v) for k, v in self.meta.items()},
            "tables": [
                {"name": t.name, "columns": t.columns, "rows": [[cell(c) for c in r] for r in t.rows]} for t in self.tables
            ],
        }
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"

    def render(self, fmt: str) -> str:
        return self.to_obj() if fmt == "obj" else self.to_text()


def parse_text(text: str) -> Report:
    report = Report()
    lines = text.split("\n")
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        m = _HEADER.match(lines[i])
        if not m:
            raise ReportFormatError(f"line {i + 1}: malformed header {lines[i]!r}")
        report.meta[m.group(1)] = m.group(2)
        i += 1
    block: list[str] = []
    name = None

    def flush():
        if name is None:
            return
        rows = list(csv.reader(io.StringIO("\n".join(block))))
        if not rows:
            raise ReportFormatError(f"table {name} has no column header")
        t = Table(name, rows[0], [[parse_cell(c) for c in r] for r in rows[1:]])
        if any(len(r) != len(t.columns) for r in t.rows):
            raise ReportFormatError(f"table {name} has ragged rows")
        report.tables.append(t)

    for j in range(i, len(lines)):
        line = lines[j]
        m = _BLOCK.match(line)
        if m:
            flush()
            name, block = m.group(1), []
        elif line == "":
            continue
        elif name is None:
            raise ReportFormatError(f"line {j + 1}: data outside a table")
        else:
            block.append(line)
    flush()
    return report


def parse_obj(text: str) -> Report:
    obj = json.loads(text)
    return Report(dict(obj["meta"]), [Table(t["name"], t["columns"], t["rows"]) for t in obj["tables"]])


def matrix_table(report: Report, name: str, labels: Iterable[str], matrix: np.ndarray) -> Table:
    labels = list(labels)
    t = report.table(name, ["row", *labels])
    for lab, row in zip(labels, np.asarray(matrix)):
        t.add(lab, *[float(x) for x in row])
    return t
