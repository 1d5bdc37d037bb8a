"""Masked-cell pre-training loop and the relative-ranking validation metric.

Each epoch draws one row per table, masks cells under the 30% / 80-10-10
policy, and minimizes the weighted multi-task reconstruction loss over the
masked cells only. The whole loop is deterministic given its seed.
"""

from __future__ import annotations

import datetime
import math
import random
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, ModelConfig
from .cells import CellValue, Date, Number, Row, Text
from .dates import days_from_civil
from .encoder import (
    TYPE_DATE,
    TYPE_NUMBER,
    CellEncoder,
    CellFeatures,
    RowBatch,
    build_row_batch,
    row_features,
)
from .heads import (
    LossBundle,
    LossWeights,
    MaskedTargets,
    PretrainHeads,
    masked_losses,
    split_date_outputs,
    split_number_outputs,
    total_loss,
)
from .ingest import Table, sample_epoch_rows
from .masking import DEFAULT_MASK_PROB, apply_mask, make_mask_plan
from .numeric import BETA_MIN, decode_triplet_prediction, reconstruct_number, tilde_alpha
from .text_embed import TextEmbedder


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ScheduleConfig:
    """Triangular learning rate: linear warmup to the peak, linear decay to zero."""

    peak_lr: float = 3e-4
    warmup_fraction: float = 0.05
    total_steps: int = 0  # 0: derived from epochs * steps-per-epoch
    batch_size: int = 4096
    micro_batch_size: int = 64

    def __post_init__(self):
        if not 0 < self.warmup_fraction < 1:
            raise ValueError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.micro_batch_size > self.batch_size:
            raise ValueError("micro_batch_size cannot exceed batch_size")


def lr_at(step: float, schedule: ScheduleConfig) -> float:
    total = schedule.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    warmup = schedule.warmup_fraction * total
    if step <= warmup:
        return schedule.peak_lr * step / warmup if warmup > 0 else schedule.peak_lr
    return schedule.peak_lr * (total - step) / (total - warmup)


class PretrainModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = CellEncoder(config)
        self.backbone = Backbone(config)
        self.heads = PretrainHeads(config)

    def forward(self, batch: RowBatch) -> torch.Tensor:
        return self.backbone(self.encoder(batch), batch.pad_mask)


def build_pretrain_model(config: ModelConfig, seed: int) -> PretrainModel:
    torch.manual_seed(seed)
    return PretrainModel(config)


def build_masked_targets(
    originals: list[list[CellFeatures]],
    masked_indices: list[list[int]],
    seq_len: int,
    text_dim: int,
) -> MaskedTargets:
    """Loss targets at masked positions, taken from the unmasked features."""
    num_pos, num_sign, num_exp, num_tilde = [], [], [], []
    date_pos, date_day, date_month, date_year = [], [], [], []
    text_pos, text_target = [], []
    for i, (cells, masked) in enumerate(zip(originals, masked_indices)):
        for j in masked:
            cell = cells[j]
            flat = i * seq_len + j
            if cell.kind == TYPE_NUMBER:
                t = cell.triplet
                num_pos.append(flat)
                num_sign.append(t.sign_class)
                num_exp.append(t.exponent_class)
                num_tilde.append(tilde_alpha(t.alpha, t.beta))
            elif cell.kind == TYPE_DATE:
                d = cell.date
                date_pos.append(flat)
                date_day.append(d.day_class)
                date_month.append(d.month_class)
                date_year.append(d.year_class)
            else:
                text_pos.append(flat)
                text_target.append(cell.text_vec)
    return MaskedTargets(
        number_pos=torch.tensor(num_pos, dtype=torch.long),
        number_sign=torch.tensor(num_sign, dtype=torch.long),
        number_exponent=torch.tensor(num_exp, dtype=torch.long),
        number_tilde=torch.tensor(num_tilde, dtype=torch.float64),
        date_pos=torch.tensor(date_pos, dtype=torch.long),
        date_day=torch.tensor(date_day, dtype=torch.long),
        date_month=torch.tensor(date_month, dtype=torch.long),
        date_year=torch.tensor(date_year, dtype=torch.long),
        text_pos=torch.tensor(text_pos, dtype=torch.long),
        text_target=(torch.from_numpy(np.stack(text_target)) if text_target
                     else torch.zeros((0, text_dim), dtype=torch.float64)),
    )


@dataclass
class _EpochItem:
    masked: list[CellFeatures]
    original: list[CellFeatures]
    masked_indices: list[int]


class _Corpus:
    """Precomputed per-table features, column pools, and validation holdout."""

    def __init__(self, tables: list[Table], embedder: TextEmbedder, num_bins: int,
                 valid_rows_per_table: int, seed: int):
        rng = random.Random(seed * 9_176_741 + 11)
        self.features: dict[int, list[CellFeatures]] = {}
        self.pools: list[dict[str, list[CellValue]]] = []
        self.validation: list[tuple[list[CellFeatures], dict[str, list[CellValue]]]] = []
        self._table_of_row: dict[int, int] = {}
        self._train_tables: list[Table] = []
        for table_idx, table in enumerate(tables):
            rows = list(table.rows)
            uniques = {
                name: list(dict.fromkeys(table.column_values(name)))
                for name, _ in table.manifest.columns
            }
            held: list[Row] = []
            if valid_rows_per_table > 0 and len(rows) > valid_rows_per_table:
                for _ in range(valid_rows_per_table):
                    held.append(rows.pop(rng.randrange(len(rows))))
            self._train_tables.append(Table(table.name, table.manifest, rows))
            self.pools.append({name: table.column_values(name) for name, _ in table.manifest.columns})
            for row in rows:
                self.features[id(row)] = row_features(row, embedder, num_bins)
                self._table_of_row[id(row)] = table_idx
            for row in held:
                self.validation.append((row_features(row, embedder, num_bins), uniques))

    def sample_epoch(self, rows_seed: int) -> list[tuple[int, Row]]:
        picked = sample_epoch_rows(self._train_tables, rows_seed)
        return [(self._table_of_row[id(row)], row) for _table, row in picked]


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def pretrain(
    tables: list[Table],
    model: PretrainModel,
    schedule: ScheduleConfig,
    epochs: int,
    seed: int,
    embedder: TextEmbedder,
    weights: LossWeights | None = None,
    mask_prob: float = DEFAULT_MASK_PROB,
    valid_rows_per_table: int = 0,
    huber_delta: float = 1.0,
) -> list[dict]:
    """Train the model in place; returns the per-epoch metrics log."""
    if not tables:
        raise ValueError("pretraining needs at least one table")
    weights = weights or LossWeights.cascading_uniform()
    config = model.config
    corpus = _Corpus(tables, embedder, config.num_bins, valid_rows_per_table, seed)

    rows_per_epoch = len(tables)
    steps_per_epoch = max(1, math.ceil(rows_per_epoch / schedule.batch_size))
    if schedule.total_steps == 0:
        schedule.total_steps = max(1, epochs * steps_per_epoch)

    optimizer = torch.optim.AdamW(model.parameters(), lr=0.0, betas=(0.9, 0.999), weight_decay=0.01)
    master = random.Random(seed)
    metrics: list[dict] = []
    step = 0

    for epoch in range(epochs):
        rows_seed = master.getrandbits(62)
        mask_rng = random.Random(master.getrandbits(62))
        model.train()

        items: list[_EpochItem] = []
        for table_idx, row in corpus.sample_epoch(rows_seed):
            original = corpus.features[id(row)]
            plan = make_mask_plan(row, corpus.pools[table_idx], mask_prob, mask_rng)
            masked = apply_mask(original, plan, embedder, config.num_bins)
            items.append(_EpochItem(masked, original, plan.masked_indices))

        comp_sums = {name: 0.0 for name in ("day", "month", "year", "sign", "fraction", "exponent", "text")}
        type_counts = {"number": 0, "date": 0, "text": 0}
        last_lr = 0.0

        for group in _chunks(items, schedule.batch_size):
            optimizer.zero_grad()
            group_rows = len(group)
            for micro in _chunks(group, schedule.micro_batch_size):
                batch = build_row_batch([it.masked for it in micro], config.num_bins, config.text_dim)
                targets = build_masked_targets(
                    [it.original for it in micro], [it.masked_indices for it in micro],
                    batch.max_len, config.text_dim,
                )
                hidden = model(batch)
                bundle = masked_losses(model.heads, hidden, targets, huber_delta)
                loss = total_loss(bundle, weights)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {step}: "
                        f"{ {k: float(v.detach()) for k, v in bundle.components().items()} }"
                    )
                # a micro-batch can end up with no masked cells; its gradient
                # contribution is exactly zero, so skip the backward pass
                if any(bundle.counts.values()):
                    (loss * (len(micro) / group_rows)).backward()
                _accumulate(comp_sums, type_counts, bundle)
            last_lr = lr_at(min(step, schedule.total_steps), schedule)
            for pg in optimizer.param_groups:
                pg["lr"] = last_lr
            optimizer.step()
            step += 1

        entry = {"epoch": epoch}
        for name in comp_sums:
            n = type_counts[_type_of_component(name)]
            entry[f"loss_{name}"] = comp_sums[name] / n if n else 0.0
        entry["loss_total"] = sum(weights.as_dict()[name] * entry[f"loss_{name}"] for name in comp_sums)
        entry["lr"] = last_lr
        if corpus.validation:
            entry["validation_rank"] = validate_relative_rank(model, embedder, corpus.validation)
        else:
            entry["validation_rank"] = None
        metrics.append(entry)
    return metrics


def _type_of_component(name: str) -> str:
    if name in ("sign", "fraction", "exponent"):
        return "number"
    if name in ("day", "month", "year"):
        return "date"
    return "text"


def _accumulate(comp_sums: dict, type_counts: dict, bundle: LossBundle):
    for name, value in bundle.components().items():
        comp_sums[name] += float(value.detach()) * bundle.counts[_type_of_component(name)]
    for t in type_counts:
        type_counts[t] += bundle.counts[t]


def _predict_cell(model: PretrainModel, hidden: torch.Tensor, cell: CellFeatures):
    """Decode one masked position's head output into a comparable prediction."""
    if cell.kind == TYPE_NUMBER:
        sign_logits, exp_logits, frac_logit = split_number_outputs(model.heads.number(hidden))
        return decode_triplet_prediction(
            int(sign_logits.argmax()), float(torch.sigmoid(frac_logit)), int(exp_logits.argmax()) + BETA_MIN
        )
    if cell.kind == TYPE_DATE:
        day_l, month_l, year_l = split_date_outputs(model.heads.date(hidden))
        return days_from_civil(int(year_l.argmax()) + 1950, int(month_l.argmax()) + 1, int(day_l.argmax()) + 1)
    return model.heads.text(hidden).detach().numpy()


def _candidate_similarity(cell: CellFeatures, prediction, candidate: CellValue,
                          embedder: TextEmbedder) -> float:
    if cell.kind == TYPE_NUMBER:
        return -abs(prediction - candidate.value)
    if cell.kind == TYPE_DATE:
        d = candidate.value
        return -abs(prediction - days_from_civil(d.year, d.month, d.day))
    vec = embedder.embed_one(candidate.value)
    denom = np.linalg.norm(prediction) * np.linalg.norm(vec)
    return float(prediction @ vec / denom) if denom > 0 else 0.0


def _truth_value(cell: CellFeatures) -> CellValue:
    if cell.kind == TYPE_NUMBER:
        return Number(reconstruct_number(cell.triplet))
    if cell.kind == TYPE_DATE:
        return Date(datetime.date(cell.date.year, cell.date.month, cell.date.day))
    return Text(cell.text_value)


def save_pretrained(path: str, model: PretrainModel, extra_meta: dict | None = None):
    from .checkpoint import save_checkpoint, state_dict_to_tensors

    meta = {"kind": "pretrain", "model": model.config.to_json_dict()}
    meta.update(extra_meta or {})
    save_checkpoint(path, meta, state_dict_to_tensors(model.state_dict()))


def load_pretrained(path: str) -> tuple[dict, PretrainModel]:
    from .checkpoint import CheckpointError, load_checkpoint, tensors_to_state_dict

    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "pretrain":
        raise CheckpointError(f"{path} is not a pre-training checkpoint")
    model = PretrainModel(ModelConfig.from_json_dict(meta["model"]))
    model.load_state_dict(tensors_to_state_dict(tensors, dict(model.state_dict())))
    return meta, model


def validate_relative_rank(
    model: PretrainModel,
    embedder: TextEmbedder,
    items: list[tuple[list[CellFeatures], dict[str, list[CellValue]]]],
    batch_rows: int = 128,
) -> float:
    """Average relative ranking of ground truth among each column's unique values.

    One cell at a time is masked and predicted; the column's unique values are
    ranked by similarity to the prediction (cosine for text, negated absolute
    difference for numbers and day distances for dates). A perfect prediction
    ranks the truth first and scores 1; the metric is the mean over cells.
    """
    config = model.config
    tasks = []  # (masked_row, position, cell, candidates)
    for feats, uniques in items:
        for j, cell in enumerate(feats):
            candidates = list(dict.fromkeys(uniques.get(cell.column, [])))
            if len(candidates) < 2:
                continue
            masked = feats[:j] + [feats[j].zeroed()] + feats[j + 1 :]
            tasks.append((masked, j, cell, candidates))
    if not tasks:
        return 0.0

    model.eval()
    scores = []
    with torch.no_grad():
        for chunk in _chunks(tasks, batch_rows):
            batch = build_row_batch([t[0] for t in chunk], config.num_bins, config.text_dim)
            hidden = model(batch)
            for i, (_masked, j, cell, candidates) in enumerate(chunk):
                prediction = _predict_cell(model, hidden[i, j], cell)
                sims = [_candidate_similarity(cell, prediction, c, embedder) for c in candidates]
                s_true = _candidate_similarity(cell, prediction, _truth_value(cell), embedder)
                better = sum(1 for s in sims if s > s_true)
                ties = sum(1 for s in sims if s == s_true)
                rank = better + (ties + 1) / 2
                scores.append(1.0 - (rank - 1.0) / (len(candidates) - 1.0))
    return float(np.mean(scores))
