#!/usr/bin/env python3
"""Write the synthetic corpora to disk as CSV tables for the CLI.

Examples:
    python scripts/make_corpus.py dependent --out data/pretrain --tables 200 --rows 50
    python scripts/make_corpus.py linear --out data/linear.csv --rows 64
"""

import argparse
import os
import sys

from portal.ingest import emit_csv
from portal.synth import make_dependent_corpus, make_linear_table


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)

    p = sub.add_parser("dependent", help="text column determines number and date columns")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tables", type=int, default=200)
    p.add_argument("--rows", type=int, default=50)
    p.add_argument("--vocab", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("linear", help="y = 3*x1 - x2 + noise")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=42)

    args = parser.parse_args()
    if args.kind == "dependent":
        os.makedirs(args.out, exist_ok=True)
        tables = make_dependent_corpus(args.tables, args.rows, args.vocab, args.seed)
        for table in tables:
            with open(os.path.join(args.out, f"{table.name}.csv"), "w", encoding="utf-8") as f:
                f.write(emit_csv(table.manifest, table.rows))
        print(f"wrote {len(tables)} tables to {args.out}")
    else:
        table = make_linear_table(args.rows, args.noise, args.seed)
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(emit_csv(table.manifest, table.rows))
        print(f"wrote {len(table.rows)} rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
