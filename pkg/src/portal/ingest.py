"""Table ingestion: CSV / JSON-lines parsing, column type inference, row sampling.

No cleaning, normalization, clipping, or imputation happens here. Values that
fail their column's type parse become Missing; everything else passes through
untouched, outliers included.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import math
import os
import random
import re
from dataclasses import dataclass

from .cells import (
    MISSING,
    CellValue,
    ColumnType,
    Date,
    ManifestError,
    Number,
    Row,
    TableManifest,
    Text,
    is_missing,
)

# Common CSV conventions; Missing cells simply emit no token downstream,
# so aggressive markers are safe.
MISSING_MARKERS = frozenset({"", "na", "n/a", "nan", "null", "none"})

# Strict decimal / scientific numerals. Deliberately narrower than float():
# no inf/nan names, no underscores, no hex.
_NUMERAL_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

DEFAULT_DATE_FORMATS = ("%Y-%m-%d", "%Y-%m-%dT%H:%M:%S")

TYPE_VOTE_THRESHOLD = 0.90


class ParseError(ValueError):
    """Malformed source content; carries a 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def is_missing_marker(raw: str) -> bool:
    return raw.strip().lower() in MISSING_MARKERS


def parse_numeral(raw: str) -> float | None:
    s = raw.strip()
    if not _NUMERAL_RE.match(s):
        return None
    x = float(s)
    return x if math.isfinite(x) else None


def parse_date(raw: str, formats: tuple[str, ...] = DEFAULT_DATE_FORMATS) -> datetime.date | None:
    s = raw.strip()
    for fmt in formats:
        try:
            return datetime.datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    return None


def infer_column_type(
    values: list[str],
    threshold: float = TYPE_VOTE_THRESHOLD,
    date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS,
) -> ColumnType:
    """Vote on a column's type from its raw string values.

    Missing markers are excluded from the vote. A column is numeric if at
    least ``threshold`` of the remaining values parse as finite numerals,
    else a date column under the same rule, else text. An empty non-missing
    set is text.
    """
    voting = [v for v in values if not is_missing_marker(v)]
    if not voting:
        return ColumnType.TEXT
    n = len(voting)
    numeric = sum(1 for v in voting if parse_numeral(v) is not None)
    if numeric / n >= threshold:
        return ColumnType.NUMBER
    dates = sum(1 for v in voting if parse_date(v, date_formats) is not None)
    if dates / n >= threshold:
        return ColumnType.DATE
    return ColumnType.TEXT


def coerce_cell(raw: str, ctype: ColumnType,
                date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS) -> CellValue:
    """Parse one raw string under a known column type; failures become Missing."""
    if is_missing_marker(raw):
        return MISSING
    if ctype is ColumnType.NUMBER:
        x = parse_numeral(raw)
        return Number(x) if x is not None else MISSING
    if ctype is ColumnType.DATE:
        d = parse_date(raw, date_formats)
        return Date(d) if d is not None else MISSING
    return Text(raw)


def _coerce_json_scalar(value, ctype: ColumnType) -> CellValue:
    if value is None:
        return MISSING
    if isinstance(value, bool):
        # JSON booleans have no dedicated cell type; keep them as text labels.
        return coerce_cell("true" if value else "false", ctype)
    if isinstance(value, (int, float)):
        if ctype is ColumnType.NUMBER:
            return Number(float(value)) if math.isfinite(float(value)) else MISSING
        return coerce_cell(repr(value), ctype)
    return coerce_cell(value, ctype)


def _raw_columns_csv(stream: io.TextIOBase) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(stream, strict=True)
    try:
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV: header row required", 1) from None
        records = []
        for rec in reader:
            records.append(rec)
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", reader.line_num) from exc
    return header, records


def _raw_columns_jsonl(stream: io.TextIOBase) -> tuple[list[str], list[dict]]:
    objects = []
    columns: list[str] = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(obj, dict):
            raise ParseError("JSONL row must be an object", lineno)
        for key, value in obj.items():
            if isinstance(value, (list, dict)):
                raise ParseError(f"non-scalar value for key {key!r}", lineno)
            if key not in seen:
                seen.add(key)
                columns.append(key)
        objects.append(obj)
    return columns, objects


def parse_table(
    source,
    format: str,
    manifest: TableManifest | None = None,
    type_threshold: float = TYPE_VOTE_THRESHOLD,
    date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS,
) -> tuple[TableManifest, list[Row]]:
    """Parse a CSV (header mandatory) or JSONL byte/text stream into rows.

    When no manifest is given, per-column types are inferred by vote over the
    raw values. Cells that fail their column's parse become Missing. JSONL
    rows may omit keys entirely (variable-length rows).
    """
    if isinstance(source, bytes):
        stream: io.TextIOBase = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        stream = io.StringIO(source)
    elif isinstance(source, io.TextIOBase):
        stream = source
    else:
        stream = io.TextIOWrapper(source, encoding="utf-8")

    if format == "csv":
        header, records = _raw_columns_csv(stream)
        if len(set(header)) != len(header):
            raise ManifestError(f"duplicate header names: {sorted({h for h in header if header.count(h) > 1})}")
        if manifest is None:
            types = []
            for i, name in enumerate(header):
                raw = [rec[i] for rec in records if i < len(rec)]
                types.append((name, infer_column_type(raw, type_threshold, date_formats)))
            manifest = TableManifest(columns=types)
        rows = []
        for rec in records:
            cells: list[tuple[str, CellValue]] = []
            for (name, ctype), raw in zip(manifest.columns, rec):
                cells.append((name, coerce_cell(raw, ctype, date_formats)))
            # short records: absent trailing cells stay omitted
            rows.append(Row(cells))
        return manifest, rows

    if format == "jsonl":
        columns, objects = _raw_columns_jsonl(stream)
        if manifest is None:
            types = []
            for name in columns:
                raw = []
                for obj in objects:
                    if name in obj and obj[name] is not None:
                        v = obj[name]
                        if isinstance(v, bool):
                            raw.append("true" if v else "false")
                        elif isinstance(v, (int, float)):
                            raw.append(repr(v))
                        else:
                            raw.append(v)
                types.append((name, infer_column_type(raw, type_threshold, date_formats)))
            manifest = TableManifest(columns=types)
        type_of = dict(manifest.columns)
        rows = []
        for obj in objects:
            cells = [
                (key, _coerce_json_scalar(value, type_of.get(key, ColumnType.TEXT)))
                for key, value in obj.items()
            ]
            rows.append(Row(cells))
        return manifest, rows

    raise ValueError(f"unknown format {format!r}; expected 'csv' or 'jsonl'")


def _cell_to_raw(value: CellValue) -> str:
    if is_missing(value):
        return ""
    if isinstance(value, Number):
        return repr(value.value)
    if isinstance(value, Date):
        return value.value.isoformat()
    return value.value


def emit_csv(manifest: TableManifest, rows: list[Row]) -> str:
    """Inverse of csv parse_table for already-typed rows (Missing -> empty field)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(manifest.column_names())
    for row in rows:
        lookup = dict(row.cells)
        writer.writerow([_cell_to_raw(lookup.get(name, MISSING)) for name in manifest.column_names()])
    return buf.getvalue()


def emit_jsonl(rows: list[Row]) -> str:
    lines = []
    for row in rows:
        obj = {}
        for name, value in row.cells:
            if is_missing(value):
                obj[name] = None
            elif isinstance(value, Number):
                obj[name] = value.value
            elif isinstance(value, Date):
                obj[name] = value.value.isoformat()
            else:
                obj[name] = value.value
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class Table:
    """A parsed table handle: manifest plus materialized rows."""

    name: str
    manifest: TableManifest
    rows: list[Row]

    def column_values(self, column: str) -> list[CellValue]:
        return [v for row in self.rows for name, v in row.cells if name == column and not is_missing(v)]


def load_table_file(path: str, manifest_path: str | None = None) -> Table:
    """Parse one CSV or JSONL file, honoring an optional JSON manifest sidecar."""
    manifest = None
    if manifest_path is not None and os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as f:
            manifest = TableManifest.from_json_dict(json.load(f))
    fmt = "jsonl" if path.endswith((".jsonl", ".ndjson")) else "csv"
    with open(path, "rb") as f:
        parsed_manifest, rows = parse_table(f.read(), fmt, manifest)
    name = os.path.splitext(os.path.basename(path))[0]
    return Table(name=name, manifest=parsed_manifest, rows=rows)


def load_table_dir(data_dir: str) -> list[Table]:
    """Load every CSV/JSONL table under a directory, sorted by filename."""
    if not os.path.isdir(data_dir):
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    tables = []
    for entry in sorted(os.listdir(data_dir)):
        if not entry.endswith((".csv", ".jsonl", ".ndjson")):
            continue
        path = os.path.join(data_dir, entry)
        stem = os.path.splitext(entry)[0]
        tables.append(load_table_file(path, os.path.join(data_dir, stem + ".manifest.json")))
    if not tables:
        raise FileNotFoundError(f"no .csv or .jsonl tables under {data_dir}")
    return tables


def sample_epoch_rows(tables: list[Table], rng_seed: int) -> list[tuple[Table, Row]]:
    """Draw exactly one uniform row from each table, then shuffle the draws.

    Deterministic given the seed; every table must be non-empty.
    """
    if not tables:
        raise ValueError("no tables to sample from")
    rng = random.Random(rng_seed)
    picked = []
    for table in tables:
        if not table.rows:
            raise ValueError(f"table {table.name!r} is empty")
        picked.append((table, table.rows[rng.randrange(len(table.rows))]))
    rng.shuffle(picked)
    return picked


def split_train_test(rows: list[Row], train_fraction: float, seed: int) -> tuple[list[Row], list[Row]]:
    """Disjoint seeded split; train size = round(n * fraction), clamped so both sides are non-empty."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(rows)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    k = min(max(round(n * train_fraction), 1), n - 1)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    train_idx = sorted(order[:k])
    test_idx = sorted(order[k:])
    return [rows[i] for i in train_idx], [rows[i] for i in test_idx]
