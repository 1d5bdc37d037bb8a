#!/usr/bin/env python3
"""Model-size sweep: fit each preset on one task and report score and size.

    python scripts/size_sweep.py --presets mini small --rows 200 --epochs 30
"""

import argparse
import sys
import time

import numpy as np

from portal.backbone import PRESETS, ModelConfig, count_parameters
from portal.codecs import make_codec
from portal.finetune import FinetuneConfig, finetune, predict, r2_capped
from portal.ingest import split_train_test
from portal.synth import make_linear_table
from portal.text_embed import FallbackEmbedder


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--presets", nargs="+", default=["mini", "small"],
                        choices=sorted(PRESETS))
    parser.add_argument("--rows", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--noise", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    table = make_linear_table(n_rows=args.rows, noise=args.noise, seed=args.seed)
    train_rows, test_rows = split_train_test(table.rows, 0.8, args.seed)
    y_test = np.array([r.get("y").value for r in test_rows])

    print(f"{'preset':<8} {'backbone params':>15} {'test R^2':>9} {'seconds':>8}")
    for preset in args.presets:
        config = ModelConfig.from_preset(preset, dropout=0.0)
        embedder = FallbackEmbedder(config.text_dim)
        ft = FinetuneConfig(task="regression", max_epochs=args.epochs, patience=args.epochs,
                            peak_lr=1e-3, valid_fraction=0.1, batch_size=64)
        start = time.monotonic()
        result = finetune(train_rows, table.manifest, config, ft, embedder,
                          seed=args.seed, codec=make_codec("scalar_L2"))
        preds = predict(result, test_rows, embedder)
        elapsed = time.monotonic() - start
        print(f"{preset:<8} {count_parameters(config):>15,} "
              f"{r2_capped(preds, y_test):>9.4f} {elapsed:>8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
