"""Atomic cell values and row/table containers.

A cell is one of Text / Number / Date / Missing. Rows are self-contained:
every downstream stage can encode a row without looking at its siblings.
"""

from __future__ import annotations

import datetime
import enum
from dataclasses import dataclass, field


class ColumnType(enum.Enum):
    TEXT = "text"
    NUMBER = "number"
    DATE = "date"


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Date:
    value: datetime.date


class _MissingType:
    """Singleton marker for absent or unparseable cells."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"


MISSING = _MissingType()

CellValue = Text | Number | Date | _MissingType


def is_missing(value: CellValue) -> bool:
    return value is MISSING or isinstance(value, _MissingType)


class ManifestError(ValueError):
    pass


@dataclass
class TableManifest:
    """Column schema plus optional supervised-task declaration."""

    columns: list[tuple[str, ColumnType]]
    target: str | None = None
    task: str | None = None  # "classification" | "regression"

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if any(not n for n in names):
            raise ManifestError("column names must be non-empty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ManifestError(f"duplicate column names: {dupes}")
        if self.task is not None:
            if self.task not in ("classification", "regression"):
                raise ManifestError(f"unknown task {self.task!r}")
            if self.target is None or self.target not in names:
                raise ManifestError(f"task set but target {self.target!r} is not a column")

    def column_type(self, name: str) -> ColumnType:
        for col, ctype in self.columns:
            if col == name:
                return ctype
        raise KeyError(name)

    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def to_json_dict(self) -> dict:
        d: dict = {"columns": [{"name": n, "type": t.value} for n, t in self.columns]}
        if self.target is not None:
            d["target"] = self.target
        if self.task is not None:
            d["task"] = self.task
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "TableManifest":
        try:
            columns = [(c["name"], ColumnType(c["type"])) for c in d["columns"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        return cls(columns=columns, target=d.get("target"), task=d.get("task"))


@dataclass
class Row:
    """One table row as (column name, cell value) pairs.

    Missing cells may be stored explicitly or omitted entirely; both forms
    encode identically (a Missing cell emits no token).
    """

    cells: list[tuple[str, CellValue]] = field(default_factory=list)

    def non_missing(self) -> list[tuple[str, CellValue]]:
        return [(name, v) for name, v in self.cells if not is_missing(v)]

    def get(self, column: str) -> CellValue:
        for name, v in self.cells:
            if name == column:
                return v
        return MISSING

    def drop(self, column: str) -> "Row":
        return Row([(name, v) for name, v in self.cells if name != column])
