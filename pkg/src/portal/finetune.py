"""Fine-tuning on labeled tables: pooling head, early stopping, metrics, bagging.

The decoding heads are replaced by a pooling reduction plus two linear layers
with a GELU and dropout in between. Classification trains with cross-entropy;
regression trains through a pluggable target codec. Bagging trains members on
consecutive seeds and averages predictions (probability vectors for
classification, decoded values for regression).
"""

from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Backbone, ModelConfig, init_weights, ordered_sum
from .cells import Date, Number, Row, TableManifest, Text, is_missing
from .codecs import RegressionCodec
from .encoder import CellEncoder, RowBatch, build_row_batch, row_features
from .ingest import split_train_test
from .pretrain import ScheduleConfig, TrainingDivergedError, lr_at
from .text_embed import TextEmbedder

POOLING_MODES = ("first_token", "mean")


@dataclass
class FinetuneConfig:
    task: str  # "classification" | "regression"
    max_epochs: int = 100
    patience: int = 20
    pooling: str = "first_token"
    head_hidden: int = 0  # 0: use the model hidden size
    head_dropout: float = 0.1
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.05
    batch_size: int = 64
    valid_fraction: float = 0.1  # 0 disables the early-stopping split

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not 0 <= self.valid_fraction < 1:
            raise ValueError("valid_fraction must be in [0, 1)")


def pool(tokens: torch.Tensor, pad_mask: torch.Tensor, mode: str) -> torch.Tensor:
    """Reduce [B, T, d] token outputs to one vector per row."""
    if tokens.shape[1] == 0:
        raise ValueError("cannot pool an empty token sequence")
    if mode == "first_token":
        return tokens[:, 0]
    if mode == "mean":
        mask = pad_mask.unsqueeze(-1).to(tokens.dtype)
        return ordered_sum(tokens * mask, dim=1) / mask.sum(dim=1)
    raise ValueError(f"unknown pooling mode {mode!r}")


class FinetuneModel(nn.Module):
    def __init__(self, config: ModelConfig, out_dim: int, pooling: str,
                 head_hidden: int = 0, head_dropout: float = 0.1):
        super().__init__()
        self.config = config
        self.pooling = pooling
        self.out_dim = out_dim
        self.encoder = CellEncoder(config)
        self.backbone = Backbone(config)
        hidden = head_hidden or config.hidden
        self.head = nn.Sequential(
            nn.Linear(config.hidden, hidden),
            nn.GELU(),
            nn.Dropout(head_dropout),
            nn.Linear(hidden, out_dim),
        )
        self.head.apply(init_weights)

    def forward(self, batch: RowBatch) -> torch.Tensor:
        hidden = self.backbone(self.encoder(batch), batch.pad_mask)
        return self.head(pool(hidden, batch.pad_mask, self.pooling))


def load_pretrained_trunk(model: FinetuneModel, tensors: dict[str, np.ndarray]):
    """Copy encoder/backbone weights from a pre-training checkpoint."""
    state = model.state_dict()
    loaded = 0
    for name, value in tensors.items():
        if name.startswith(("encoder.", "backbone.")) and name in state:
            if tuple(value.shape) != tuple(state[name].shape):
                raise ValueError(
                    f"pretrained tensor {name!r} has shape {value.shape}, "
                    f"model expects {tuple(state[name].shape)}"
                )
            state[name] = torch.from_numpy(value.copy()).to(state[name].dtype)
            loaded += 1
    if loaded == 0:
        raise ValueError("checkpoint shares no encoder/backbone tensors with this model")
    model.load_state_dict(state)


def label_string(value) -> str:
    if isinstance(value, Text):
        return value.value
    if isinstance(value, Number):
        return repr(value.value)
    if isinstance(value, Date):
        return value.value.isoformat()
    raise ValueError("missing label")


@dataclass
class FinetuneResult:
    model: FinetuneModel
    task: str
    target: str
    codec: RegressionCodec | None
    labels: list[str] | None
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_monitor: float = math.nan   # max accuracy (cls) / min loss (reg) over history
    valid_score: float | None = None  # accuracy or capped R^2 on the validation split
    seed: int = 0


def _prepare_rows(rows: list[Row], target: str, task: str):
    """Split rows into encodable features and target values; drop unlabeled rows."""
    kept_rows, values = [], []
    for row in rows:
        y = row.get(target)
        if is_missing(y):
            continue
        feature_row = row.drop(target)
        if not feature_row.non_missing():
            continue
        kept_rows.append(feature_row)
        if task == "regression":
            if not isinstance(y, Number):
                raise ValueError(f"regression target {target!r} has non-numeric value {y!r}")
            values.append(y.value)
        else:
            values.append(label_string(y))
    if not kept_rows:
        raise ValueError("no trainable rows: every row lacks a target or features")
    return kept_rows, values


def finetune(
    train_rows: list[Row],
    manifest: TableManifest,
    model_config: ModelConfig,
    config: FinetuneConfig,
    embedder: TextEmbedder,
    seed: int,
    codec: RegressionCodec | None = None,
    pretrained_tensors: dict[str, np.ndarray] | None = None,
    valid_rows: list[Row] | None = None,
) -> FinetuneResult:
    """Train a task head (and the whole trunk) on labeled rows.

    Early stopping monitors validation accuracy for classification and
    validation loss for regression; the best epoch's weights are restored.
    Deterministic given the seed.
    """
    if manifest.target is None:
        raise ValueError("manifest has no target column")
    target = manifest.target

    rows, values = _prepare_rows(train_rows, target, config.task)
    if valid_rows is None and config.valid_fraction > 0 and len(rows) >= 2:
        paired = list(zip(rows, values))
        train_part, valid_part = split_train_test(paired, 1.0 - config.valid_fraction, seed + 7919)
        rows, values = [r for r, _ in train_part], [v for _, v in train_part]
        v_rows, v_values = [r for r, _ in valid_part], [v for _, v in valid_part]
    elif valid_rows is not None:
        v_rows, v_values = _prepare_rows(valid_rows, target, config.task)
    else:
        v_rows, v_values = [], []

    labels: list[str] | None = None
    if config.task == "classification":
        labels = sorted(set(values) | set(v_values))
        class_of = {lab: i for i, lab in enumerate(labels)}
        y_train = torch.tensor([class_of[v] for v in values], dtype=torch.long)
        y_valid = torch.tensor([class_of[v] for v in v_values], dtype=torch.long)
        out_dim = len(labels)
        encoded_train = encoded_valid = None
    else:
        if codec is None:
            raise ValueError("regression needs a codec")
        codec.fit(np.asarray(values, dtype=np.float64))
        encoded_train = codec.encode_batch(np.asarray(values, dtype=np.float64))
        encoded_valid = codec.encode_batch(np.asarray(v_values, dtype=np.float64)) if v_values else None
        y_train = y_valid = None
        out_dim = codec.head_dim

    torch.manual_seed(seed)
    model = FinetuneModel(model_config, out_dim, config.pooling,
                          config.head_hidden, config.head_dropout)
    if pretrained_tensors is not None:
        load_pretrained_trunk(model, pretrained_tensors)

    feats = [row_features(r, embedder, model_config.num_bins) for r in rows]
    v_feats = [row_features(r, embedder, model_config.num_bins) for r in v_rows]

    steps_per_epoch = max(1, math.ceil(len(feats) / config.batch_size))
    schedule = ScheduleConfig(peak_lr=config.peak_lr, warmup_fraction=config.warmup_fraction,
                              total_steps=config.max_epochs * steps_per_epoch,
                              batch_size=config.batch_size, micro_batch_size=config.batch_size)
    optimizer = torch.optim.AdamW(model.parameters(), lr=0.0, betas=(0.9, 0.999), weight_decay=0.01)
    shuffle_rng = random.Random(seed * 65_537 + 1)

    def batch_loss(indices: list[int]) -> torch.Tensor:
        batch = build_row_batch([feats[i] for i in indices], model_config.num_bins,
                                model_config.text_dim)
        out = model(batch)
        if config.task == "classification":
            return F.cross_entropy(out, y_train[indices])
        sliced = {k: v[indices] for k, v in encoded_train.items()}
        return codec.loss(out, sliced)

    def evaluate_valid() -> float:
        """Early-stopping monitor: accuracy (higher better) or loss (lower better)."""
        model.eval()
        with torch.no_grad():
            batch = build_row_batch(v_feats, model_config.num_bins, model_config.text_dim)
            out = model(batch)
            if config.task == "classification":
                return float((out.argmax(dim=-1) == y_valid).double().mean())
            return float(codec.loss(out, encoded_valid))

    monitor_sign = 1.0 if config.task == "classification" else -1.0  # maximize vs minimize
    best_monitor = -math.inf
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = -1
    history: list[dict] = []
    step = 0

    for epoch in range(config.max_epochs):
        model.train()
        order = list(range(len(feats)))
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            indices = order[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = batch_loss(indices)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite fine-tuning loss at epoch {epoch}")
            loss.backward()
            for pg in optimizer.param_groups:
                pg["lr"] = lr_at(min(step, schedule.total_steps), schedule)
            optimizer.step()
            step += 1
            epoch_loss += float(loss.detach()) * len(indices)
        entry = {"epoch": epoch, "train_loss": epoch_loss / len(feats)}

        if v_feats:
            monitor = evaluate_valid()
            entry["valid_accuracy" if config.task == "classification" else "valid_loss"] = monitor
            if monitor_sign * monitor > best_monitor:
                best_monitor = monitor_sign * monitor
                best_state = copy.deepcopy(model.state_dict())
                best_epoch = epoch
            elif epoch - best_epoch > config.patience:
                history.append(entry)
                break
        history.append(entry)

    if v_feats:
        model.load_state_dict(best_state)
    else:
        best_epoch = config.max_epochs - 1
        best_monitor = math.nan

    result = FinetuneResult(
        model=model, task=config.task, target=target, codec=codec, labels=labels,
        history=history, best_epoch=best_epoch,
        best_monitor=(monitor_sign * best_monitor if v_feats else math.nan),
        seed=seed,
    )
    if v_feats:
        if config.task == "classification":
            result.valid_score = result.best_monitor
        else:
            preds = predict(result, v_rows, embedder)
            targets = np.asarray(v_values, dtype=np.float64)
            result.valid_score = r2_capped(preds, targets) if len(set(v_values)) > 1 else 0.0
    return result


def predict(result: FinetuneResult, rows: list[Row], embedder: TextEmbedder,
            batch_size: int = 256) -> np.ndarray:
    """Class probabilities [n, C] for classification, decoded values [n] for regression.

    Rows may carry extra columns (encoded normally) and may include the
    target column, which is ignored.
    """
    model = result.model
    model.eval()
    feats = [row_features(r.drop(result.target), embedder, model.config.num_bins) for r in rows]
    outputs = []
    with torch.no_grad():
        for start in range(0, len(feats), batch_size):
            batch = build_row_batch(feats[start : start + batch_size],
                                    model.config.num_bins, model.config.text_dim)
            out = model(batch)
            if result.task == "classification":
                outputs.append(torch.softmax(out, dim=-1).double().numpy())
            else:
                outputs.append(result.codec.decode(out))
    return np.concatenate(outputs, axis=0)


def save_finetuned(path: str, result: FinetuneResult, manifest: TableManifest,
                   extra_meta: dict | None = None):
    from .checkpoint import save_checkpoint, state_dict_to_tensors

    model = result.model
    meta = {
        "kind": "finetune",
        "model": model.config.to_json_dict(),
        "task": result.task,
        "target": result.target,
        "pooling": model.pooling,
        "out_dim": model.out_dim,
        "manifest": manifest.to_json_dict(),
        "seed": result.seed,
        "valid_score": result.valid_score,
        "best_epoch": result.best_epoch,
    }
    if result.task == "classification":
        meta["labels"] = result.labels
    else:
        meta["codec"] = result.codec.state_dict()
    meta.update(extra_meta or {})
    save_checkpoint(path, meta, state_dict_to_tensors(model.state_dict()))


def load_finetuned(path: str) -> tuple[dict, FinetuneResult]:
    from .checkpoint import CheckpointError, load_checkpoint, tensors_to_state_dict
    from .codecs import codec_from_state

    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "finetune":
        raise CheckpointError(f"{path} is not a fine-tuning checkpoint")
    config = ModelConfig.from_json_dict(meta["model"])
    head_hidden = tensors["head.0.weight"].shape[0]
    model = FinetuneModel(config, meta["out_dim"], meta["pooling"], head_hidden=head_hidden)
    model.load_state_dict(tensors_to_state_dict(tensors, dict(model.state_dict())))
    result = FinetuneResult(
        model=model,
        task=meta["task"],
        target=meta["target"],
        codec=codec_from_state(meta["codec"]) if meta["task"] == "regression" else None,
        labels=meta.get("labels"),
        valid_score=meta.get("valid_score"),
        seed=meta.get("seed", 0),
    )
    return meta, result


def accuracy(predicted_labels: list, true_labels: list) -> float:
    if len(predicted_labels) != len(true_labels):
        raise ValueError("length mismatch")
    if not true_labels:
        raise ValueError("empty inputs")
    return float(np.mean([p == t for p, t in zip(predicted_labels, true_labels)]))


def r2_capped(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Coefficient of determination floored at zero."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size < 2:
        raise ValueError("need two equal-length vectors of at least 2 points")
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("constant targets: R^2 undefined")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return max(0.0, 1.0 - ss_res / ss_tot)


def bag_predictions(member_predictions: list[np.ndarray], task: str) -> np.ndarray:
    """Average member predictions: probability vectors or decoded regression values."""
    if not member_predictions:
        raise ValueError("no member predictions")
    first = np.asarray(member_predictions[0])
    for p in member_predictions[1:]:
        if np.asarray(p).shape != first.shape:
            raise ValueError("member prediction shapes differ")
    return np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in member_predictions]), axis=0)


def select_top_members(valid_scores: list[float], n: int) -> list[int]:
    """Indices of the n best members by validation score (higher is better)."""
    if n <= 0:
        raise ValueError("n must be positive")
    order = sorted(range(len(valid_scores)), key=lambda i: (-valid_scores[i], i))
    return sorted(order[:n])
