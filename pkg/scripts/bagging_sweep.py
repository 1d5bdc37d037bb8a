#!/usr/bin/env python3
"""Top-n bagging curve: train a batch of members, then average the best n.

Members are trained on reseeded runs of the same task; for each n the best n
by validation score are kept and their predictions averaged. Prints test R^2
against n.

    python scripts/bagging_sweep.py --members 10 --rows 200
"""

import argparse
import sys

import numpy as np

from portal.backbone import ModelConfig
from portal.codecs import make_codec
from portal.finetune import (
    FinetuneConfig,
    bag_predictions,
    finetune,
    predict,
    r2_capped,
    select_top_members,
)
from portal.ingest import split_train_test
from portal.synth import make_linear_table
from portal.text_embed import FallbackEmbedder


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--members", type=int, default=10)
    parser.add_argument("--rows", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--preset", default="mini")
    parser.add_argument("--noise", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    table = make_linear_table(n_rows=args.rows, noise=args.noise, seed=args.seed)
    train_rows, test_rows = split_train_test(table.rows, 0.8, args.seed)
    y_test = np.array([r.get("y").value for r in test_rows])

    config = ModelConfig.from_preset(args.preset, dropout=0.0)
    embedder = FallbackEmbedder(config.text_dim)
    ft = FinetuneConfig(task="regression", max_epochs=args.epochs, patience=args.epochs,
                        peak_lr=1e-3, valid_fraction=0.15, batch_size=64)

    members = []
    for i in range(args.members):
        result = finetune(train_rows, table.manifest, config, ft, embedder,
                          seed=args.seed + i, codec=make_codec("scalar_L2"))
        preds = predict(result, test_rows, embedder)
        members.append((result.valid_score, preds))
        print(f"member {i:2d}: valid R^2 {result.valid_score:.4f}, "
              f"test R^2 {r2_capped(preds, y_test):.4f}")

    scores = [score for score, _ in members]
    print(f"\n{'top-n':>6} {'test R^2':>9}")
    for n in range(1, args.members + 1):
        keep = select_top_members(scores, n)
        ensemble = bag_predictions([members[i][1] for i in keep], "regression")
        print(f"{n:>6} {r2_capped(ensemble, y_test):>9.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
