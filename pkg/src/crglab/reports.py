"""Report containers and their CSV / JSON serializations.

Every file written here carries a ``schema`` field: a top-level key in JSON and
a leading column in CSV.  CSV floats use ``repr`` so values round-trip exactly
and never depend on the locale.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import SCHEMA_VERSION

EFFECT_COLUMNS = ("layer", "head", "d_vis", "d_txt", "method", "vri")


def _plain(value):
    """Convert numpy scalars / tuples into JSON-friendly Python values."""
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path | str | None, rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Write rows with a leading ``schema`` column; returns the CSV text."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema", *columns])
    for row in rows:
        writer.writerow([SCHEMA_VERSION, *(_cell(row.get(c)) for c in columns)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_csv(path: Path | str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path: Path | str | None, payload: dict) -> str:
    body = {"schema": SCHEMA_VERSION, **_plain(payload)}
    text = json.dumps(body, indent=2, sort_keys=False, ensure_ascii=False)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def write_jsonl(path: Path | str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"schema": SCHEMA_VERSION, **_plain(rec)}, ensure_ascii=False) + "\n")


def read_jsonl(path: Path | str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class AuditReport:
    """Named table of statistic rows plus a flat summary dict."""

    name: str
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def row(self, **match) -> dict:
        for r in self.rows:
            if all(r.get(k) == v for k, v in match.items()):
                return r
        raise KeyError(match)

    def to_dict(self) -> dict:
        return {"name": self.name, "summary": self.summary, "rows": self.rows}

    def to_json(self, path=None) -> str:
        return write_json(path, self.to_dict())

    def to_csv(self, path=None) -> str:
        columns: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
        return write_csv(path, self.rows, columns)


def effects_rows(effects, vri_scores=None) -> list[dict]:
    vmap = {s.key: s.value for s in vri_scores} if vri_scores is not None else {}
    return [
        {
            "layer": e.layer,
            "head": e.head,
            "d_vis": e.d_vis,
            "d_txt": e.d_txt,
            "method": e.method_label,
            "vri": vmap.get(e.key),
        }
        for e in effects
    ]


def write_effects_csv(path, effects, vri_scores=None) -> str:
    """Effect dump with columns (layer, head, d_vis, d_txt, method, vri)."""
    return write_csv(path, effects_rows(effects, vri_scores), EFFECT_COLUMNS)
