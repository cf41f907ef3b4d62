"""Experiment reports and their JSON / CSV serializations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        self.rows.append([_plain(v) for v in values])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    tables: dict[str, Table] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)
    status: str = "ok"
    messages: list[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def table(self, name: str, columns: list[str]) -> Table:
        t = Table(list(columns))
        self.tables[name] = t
        return t

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self, include_clock: bool = True) -> dict:
        out = {
            "experiment": self.experiment,
            "status": self.status,
            "config": self.config,
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
            "messages": list(self.messages),
            "tables": {k: {"columns": t.columns, "rows": t.rows} for k, t in self.tables.items()},
        }
        if include_clock:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        return _jsonable(out)

    def to_json(self, include_clock: bool = True) -> str:
        return json.dumps(self.to_dict(include_clock), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        """All tables in one file, each preceded by a ``# table: <name>`` line."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write(f"# experiment: {self.experiment}\n")
        buf.write(f"# status: {self.status}\n")
        for name, ok in self.verdicts.items():
            buf.write(f"# verdict: {name} = {'pass' if ok else 'fail'}\n")
        for name, t in self.tables.items():
            buf.write(f"# table: {name}\n")
            w.writerow(t.columns)
            for row in t.rows:
                w.writerow([format_csv_value(v) for v in row])
            buf.write("\n")
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def format_csv_value(v) -> str:
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
