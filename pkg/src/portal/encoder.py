"""Cell-to-token encoding: one d-dimensional vector per non-missing cell.

Every token is the sum of a column-name term (text embedding through its own
adapter) and a type-specific content term built from small embedding tables.
Encoding is strictly per-row: no dataset statistics exist anywhere here, so
outliers in one row can never perturb another row's tokens.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import ModelConfig, init_weights
from .cells import CellValue, Date, Number, Row, Text, is_missing
from .dates import (
    NUM_DAY_CLASSES,
    NUM_HOLIDAY_REGIONS,
    NUM_MONTH_CLASSES,
    NUM_WEEKDAY_CLASSES,
    NUM_YEAR_CLASSES,
    DateFeatures,
    date_features,
)
from .numeric import (
    NUM_EXPONENT_CLASSES,
    NUM_SIGN_CLASSES,
    NumericTriplet,
    decompose_number,
    soft_bin,
)
from .text_embed import TextEmbedder

TYPE_TEXT = 0
TYPE_NUMBER = 1
TYPE_DATE = 2

TYPE_NAMES = {TYPE_TEXT: "text", TYPE_NUMBER: "number", TYPE_DATE: "date"}


class EmptyRowError(ValueError):
    pass


@dataclass
class CellFeatures:
    """Everything the encoder needs for one cell, plus the loss targets."""

    kind: int
    column: str
    name_vec: np.ndarray
    text_value: str | None = None
    text_vec: np.ndarray | None = None
    triplet: NumericTriplet | None = None
    frac_weights: np.ndarray | None = None
    exp_embed_index: int = 0
    date: DateFeatures | None = None
    content_scale: float = 1.0  # 0.0 when the content vector is masked out

    def zeroed(self) -> "CellFeatures":
        return dataclasses.replace(self, content_scale=0.0)


def cell_features(value: CellValue, column: str, embedder: TextEmbedder, num_bins: int) -> CellFeatures:
    if is_missing(value):
        raise ValueError("Missing cells emit no token; drop them before encoding")
    name_vec = embedder.embed_one(column)
    if isinstance(value, Number):
        triplet = decompose_number(value.value)
        return CellFeatures(
            kind=TYPE_NUMBER,
            column=column,
            name_vec=name_vec,
            triplet=triplet,
            frac_weights=soft_bin(triplet.alpha, num_bins),
            # zero uses the smallest-magnitude exponent slot, deterministically
            exp_embed_index=0 if triplet.sign == 0 else triplet.exponent_class,
        )
    if isinstance(value, Date):
        return CellFeatures(kind=TYPE_DATE, column=column, name_vec=name_vec, date=date_features(value.value))
    if isinstance(value, Text):
        return CellFeatures(
            kind=TYPE_TEXT,
            column=column,
            name_vec=name_vec,
            text_value=value.value,
            text_vec=embedder.embed_one(value.value),
        )
    raise TypeError(f"cannot encode cell of type {type(value).__name__}")


def row_features(row: Row, embedder: TextEmbedder, num_bins: int) -> list[CellFeatures]:
    cells = row.non_missing()
    if not cells:
        raise EmptyRowError("row has no non-missing cells")
    return [cell_features(v, name, embedder, num_bins) for name, v in cells]


@dataclass
class RowBatch:
    """Padded feature tensors for a batch of rows."""

    kind: torch.Tensor          # [B, T] long
    pad_mask: torch.Tensor      # [B, T] bool, True = real token
    name_vec: torch.Tensor      # [B, T, E]
    text_vec: torch.Tensor      # [B, T, E]
    sign: torch.Tensor          # [B, T] long
    exponent: torch.Tensor      # [B, T] long
    frac_weights: torch.Tensor  # [B, T, K]
    day: torch.Tensor           # [B, T] long
    month: torch.Tensor         # [B, T] long
    year: torch.Tensor          # [B, T] long
    weekday: torch.Tensor       # [B, T] long
    holidays: torch.Tensor      # [B, T, M]
    content_scale: torch.Tensor  # [B, T]
    columns: list[list[str]]

    @property
    def num_rows(self) -> int:
        return self.kind.shape[0]

    @property
    def max_len(self) -> int:
        return self.kind.shape[1]


def build_row_batch(
    feature_rows: list[list[CellFeatures]],
    num_bins: int,
    text_dim: int,
    dtype: torch.dtype = torch.float32,
) -> RowBatch:
    if not feature_rows:
        raise ValueError("empty batch")
    if any(len(r) == 0 for r in feature_rows):
        raise EmptyRowError("row has no non-missing cells")
    bsz = len(feature_rows)
    seq = max(len(r) for r in feature_rows)

    kind = np.zeros((bsz, seq), dtype=np.int64)
    pad = np.zeros((bsz, seq), dtype=bool)
    name_vec = np.zeros((bsz, seq, text_dim))
    text_vec = np.zeros((bsz, seq, text_dim))
    sign = np.zeros((bsz, seq), dtype=np.int64)
    exponent = np.zeros((bsz, seq), dtype=np.int64)
    frac = np.zeros((bsz, seq, num_bins))
    day = np.zeros((bsz, seq), dtype=np.int64)
    month = np.zeros((bsz, seq), dtype=np.int64)
    year = np.zeros((bsz, seq), dtype=np.int64)
    weekday = np.zeros((bsz, seq), dtype=np.int64)
    holidays = np.zeros((bsz, seq, NUM_HOLIDAY_REGIONS))
    scale = np.zeros((bsz, seq))
    columns: list[list[str]] = []

    for i, cells in enumerate(feature_rows):
        columns.append([c.column for c in cells])
        for j, c in enumerate(cells):
            kind[i, j] = c.kind
            pad[i, j] = True
            name_vec[i, j] = c.name_vec
            scale[i, j] = c.content_scale
            if c.kind == TYPE_TEXT:
                text_vec[i, j] = c.text_vec
            elif c.kind == TYPE_NUMBER:
                sign[i, j] = c.triplet.sign_class
                exponent[i, j] = c.exp_embed_index
                frac[i, j] = c.frac_weights
            else:
                d = c.date
                day[i, j] = d.day_class
                month[i, j] = d.month_class
                year[i, j] = d.year_class
                weekday[i, j] = d.day_of_week
                holidays[i, j] = d.holidays.astype(np.float64)

    def t(arr, cast=None):
        out = torch.from_numpy(arr)
        return out.to(cast) if cast is not None else out

    return RowBatch(
        kind=t(kind),
        pad_mask=t(pad),
        name_vec=t(name_vec, dtype),
        text_vec=t(text_vec, dtype),
        sign=t(sign),
        exponent=t(exponent),
        frac_weights=t(frac, dtype),
        day=t(day),
        month=t(month),
        year=t(year),
        weekday=t(weekday),
        holidays=t(holidays, dtype),
        content_scale=t(scale, dtype),
        columns=columns,
    )


class CellEncoder(nn.Module):
    """Trainable tables and adapters turning cell features into tokens."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden
        self.config = config
        self.sign_emb = nn.Embedding(NUM_SIGN_CLASSES, d)
        self.exponent_emb = nn.Embedding(NUM_EXPONENT_CLASSES, d)
        self.fraction_emb = nn.Embedding(config.num_bins, d)
        self.day_emb = nn.Embedding(NUM_DAY_CLASSES, d)
        self.month_emb = nn.Embedding(NUM_MONTH_CLASSES, d)
        self.year_emb = nn.Embedding(NUM_YEAR_CLASSES, d)
        self.weekday_emb = nn.Embedding(NUM_WEEKDAY_CLASSES, d)
        self.holiday_emb = nn.Embedding(NUM_HOLIDAY_REGIONS, d)
        # Content and column names pass through distinct adapters so the
        # model can tell the two apart.
        self.text_adapter = nn.Linear(config.text_dim, d)
        self.name_adapter = nn.Linear(config.text_dim, d)
        self.apply(init_weights)

    def forward(self, batch: RowBatch) -> torch.Tensor:
        dtype = self.name_adapter.weight.dtype
        name_term = self.name_adapter(batch.name_vec.to(dtype))

        text_term = self.text_adapter(batch.text_vec.to(dtype))
        number_term = (
            self.sign_emb(batch.sign)
            + self.exponent_emb(batch.exponent)
            + batch.frac_weights.to(dtype) @ self.fraction_emb.weight
        )
        date_term = (
            self.day_emb(batch.day)
            + self.month_emb(batch.month)
            + self.year_emb(batch.year)
            + self.weekday_emb(batch.weekday)
            + batch.holidays.to(dtype) @ self.holiday_emb.weight
        )
        is_text = (batch.kind == TYPE_TEXT).unsqueeze(-1).to(dtype)
        is_number = (batch.kind == TYPE_NUMBER).unsqueeze(-1).to(dtype)
        is_date = (batch.kind == TYPE_DATE).unsqueeze(-1).to(dtype)
        content = is_text * text_term + is_number * number_term + is_date * date_term
        tokens = name_term + batch.content_scale.to(dtype).unsqueeze(-1) * content
        return tokens * batch.pad_mask.unsqueeze(-1).to(dtype)


@dataclass
class TokenSequence:
    """Encoded row: one token per non-missing cell, order-free downstream."""

    tokens: torch.Tensor        # [T, d]
    tags: list[int]
    column_names: list[str]

    def __len__(self) -> int:
        return len(self.tags)


def encode_cell(value: CellValue, column: str, encoder: CellEncoder, embedder: TextEmbedder) -> torch.Tensor:
    feats = cell_features(value, column, embedder, encoder.config.num_bins)
    batch = build_row_batch([[feats]], encoder.config.num_bins, encoder.config.text_dim,
                            dtype=encoder.name_adapter.weight.dtype)
    with torch.no_grad():
        return encoder(batch)[0, 0]


def encode_row(row: Row, encoder: CellEncoder, embedder: TextEmbedder) -> TokenSequence:
    feats = row_features(row, embedder, encoder.config.num_bins)
    batch = build_row_batch([feats], encoder.config.num_bins, encoder.config.text_dim,
                            dtype=encoder.name_adapter.weight.dtype)
    with torch.no_grad():
        tokens = encoder(batch)[0]
    return TokenSequence(tokens=tokens, tags=[c.kind for c in feats], column_names=[c.column for c in feats])
