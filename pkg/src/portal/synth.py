"""Synthetic corpora for learnability checks and experiment scripts."""

from __future__ import annotations

import datetime
import random

import numpy as np

from .cells import CellValue, ColumnType, Date, Number, Row, TableManifest, Text
from .encoder import CellFeatures, row_features
from .ingest import Table
from .text_embed import TextEmbedder

_CODE_WORDS = (
    "amber", "basalt", "cobalt", "dune", "ember", "fjord", "garnet", "harbor",
    "indigo", "juniper", "krill", "lagoon", "meadow", "nickel", "onyx", "prairie",
)

DEPENDENT_COLUMNS = ("item", "amount", "shipped")


def dependent_code_maps(vocab: int = 16) -> tuple[list[str], dict[str, float], dict[str, datetime.date]]:
    """A text vocabulary that deterministically fixes a number and a date."""
    if not 2 <= vocab <= len(_CODE_WORDS):
        raise ValueError(f"vocab must be in [2, {len(_CODE_WORDS)}]")
    codes = list(_CODE_WORDS[:vocab])
    # well-separated magnitudes: distinct exponents and fractions
    numbers = {c: float((-1) ** i * (1.0 + (i % 7) / 8.0) * 2.0 ** (i - vocab // 2))
               for i, c in enumerate(codes)}
    dates = {c: datetime.date(1990 + 4 * i, 1 + (i * 5) % 12, 1 + (i * 9) % 28)
             for i, c in enumerate(codes)}
    return codes, numbers, dates


def _dependent_row(code: str, numbers, dates, rng: random.Random) -> Row:
    # two independent noise columns keep an untrained model's ranking honest:
    # every row is a distinct context, so chance alignment averages out
    return Row([
        ("item", Text(code)),
        ("amount", Number(numbers[code])),
        ("shipped", Date(dates[code])),
        ("batch", Number(rng.uniform(-4.0, 4.0))),
        ("lot", Number(float(rng.randrange(1000)))),
    ])


def make_dependent_corpus(num_tables: int = 200, rows_per_table: int = 50,
                          vocab: int = 16, seed: int = 0) -> list[Table]:
    """Tables where the text column determines the number and date columns.

    Two extra noise columns vary independently of the mapping.
    """
    codes, numbers, dates = dependent_code_maps(vocab)
    manifest = TableManifest(columns=[
        ("item", ColumnType.TEXT), ("amount", ColumnType.NUMBER), ("shipped", ColumnType.DATE),
        ("batch", ColumnType.NUMBER), ("lot", ColumnType.NUMBER),
    ])
    rng = random.Random(seed)
    tables = []
    for t in range(num_tables):
        rows = [_dependent_row(codes[rng.randrange(len(codes))], numbers, dates, rng)
                for _ in range(rows_per_table)]
        tables.append(Table(f"synth{t:03d}", manifest, rows))
    return tables


def make_dependent_rows(n_rows: int, vocab: int = 16, seed: int = 0) -> list[Row]:
    """Fresh rows from the same deterministic mapping (held-out data)."""
    codes, numbers, dates = dependent_code_maps(vocab)
    rng = random.Random(seed)
    return [_dependent_row(codes[rng.randrange(len(codes))], numbers, dates, rng)
            for _ in range(n_rows)]


def dependent_validation_items(
    embedder: TextEmbedder, num_bins: int, n_rows: int, vocab: int = 16, seed: int = 99,
) -> list[tuple[list[CellFeatures], dict[str, list[CellValue]]]]:
    """Held-out rows paired with the informative columns' unique values."""
    codes, numbers, dates = dependent_code_maps(vocab)
    uniques: dict[str, list[CellValue]] = {
        "item": [Text(c) for c in codes],
        "amount": [Number(numbers[c]) for c in codes],
        "shipped": [Date(dates[c]) for c in codes],
    }
    return [(row_features(row, embedder, num_bins), uniques)
            for row in make_dependent_rows(n_rows, vocab, seed)]


def dependent_finetune_manifest() -> TableManifest:
    """Task manifest for predicting the number column of the dependent corpus."""
    return TableManifest(columns=[
        ("item", ColumnType.TEXT), ("amount", ColumnType.NUMBER), ("shipped", ColumnType.DATE),
        ("batch", ColumnType.NUMBER), ("lot", ColumnType.NUMBER),
    ], target="amount", task="regression")


def make_linear_table(n_rows: int = 64, noise: float = 0.01, seed: int = 0) -> Table:
    """Rows with y = 3*x1 - x2 + noise for memorization checks."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_rows):
        x1, x2 = rng.normal(), rng.normal()
        y = 3.0 * x1 - x2 + noise * rng.normal()
        rows.append(Row([("x1", Number(float(x1))), ("x2", Number(float(x2))),
                         ("y", Number(float(y)))]))
    manifest = TableManifest(
        columns=[("x1", ColumnType.NUMBER), ("x2", ColumnType.NUMBER), ("y", ColumnType.NUMBER)],
        target="y", task="regression",
    )
    return Table("linear", manifest, rows)
