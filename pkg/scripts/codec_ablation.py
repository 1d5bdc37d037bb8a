#!/usr/bin/env python3
"""Sweep all regression target codecs on one synthetic task and tabulate scores.

Trains one model per codec under identical settings and reports capped R^2 on
a held-out test split plus a failure count (codec-failure errors), mirroring
the target-encoding ablation mechanics at desk scale.

    python scripts/codec_ablation.py --rows 200 --epochs 30 --seed 3
"""

import argparse
import math
import sys

import numpy as np

from portal.backbone import ModelConfig
from portal.cells import ColumnType, Number, Row, TableManifest
from portal.codecs import CODEC_NAMES, CodecFailureError, make_codec
from portal.finetune import FinetuneConfig, finetune, predict, r2_capped
from portal.ingest import split_train_test
from portal.pretrain import TrainingDivergedError
from portal.text_embed import FallbackEmbedder


def synthetic_task(n_rows: int, seed: int) -> tuple[TableManifest, list[Row]]:
    """Nonlinear, skewed targets: a reasonable stress test for the codecs."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_rows):
        x1, x2 = float(rng.normal()), float(rng.normal())
        y = float(math.exp(1.2 * x1) * (1.0 + 0.3 * x2) + 0.05 * rng.normal())
        rows.append(Row([("x1", Number(x1)), ("x2", Number(x2)), ("y", Number(y))]))
    manifest = TableManifest(
        columns=[("x1", ColumnType.NUMBER), ("x2", ColumnType.NUMBER), ("y", ColumnType.NUMBER)],
        target="y", task="regression",
    )
    return manifest, rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--preset", default="mini")
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    manifest, rows = synthetic_task(args.rows, args.seed)
    train_rows, test_rows = split_train_test(rows, 0.8, args.seed)
    y_test = np.array([r.get("y").value for r in test_rows])

    config = ModelConfig.from_preset(args.preset, dropout=0.0)
    embedder = FallbackEmbedder(config.text_dim)
    ft = FinetuneConfig(task="regression", max_epochs=args.epochs, patience=args.epochs,
                        peak_lr=args.lr, valid_fraction=0.1, batch_size=64)

    print(f"{'codec':<28} {'R^2 (%)':>8} {'failures':>9}")
    for name in CODEC_NAMES:
        failures = 0
        score = float("nan")
        try:
            result = finetune(train_rows, manifest, config, ft, embedder,
                              seed=args.seed, codec=make_codec(name))
            preds = predict(result, test_rows, embedder)
            score = 100.0 * r2_capped(preds, y_test)
        except (CodecFailureError, TrainingDivergedError):
            failures += 1
        print(f"{name:<28} {score:>8.1f} {failures:>9}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
