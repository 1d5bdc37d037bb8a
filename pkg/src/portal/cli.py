"""Command-line entry point: pre-train, fine-tune, evaluate, inspect encodings.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .backbone import count_parameters
from .cells import ManifestError, Number, TableManifest, is_missing
from .checkpoint import CheckpointError
from .codecs import CODEC_NAMES, CodecError, CodecFailureError, make_codec
from .config import ConfigError, RunConfig, load_run_config
from .dates import HOLIDAY_REGIONS, date_features
from .encoder import EmptyRowError
from .finetune import (
    FinetuneConfig,
    FinetuneResult,
    accuracy,
    bag_predictions,
    finetune,
    label_string,
    load_finetuned,
    predict,
    r2_capped,
    save_finetuned,
    select_top_members,
)
from .heads import LossWeights
from .ingest import ParseError, load_table_dir, load_table_file, parse_date, parse_numeral
from .numeric import decompose_number, soft_bin, tilde_alpha
from .pretrain import (
    ScheduleConfig,
    TrainingDivergedError,
    build_pretrain_model,
    load_pretrained,
    pretrain,
    save_pretrained,
)
from .text_embed import EmbedderConfigError, SidecarTransportError, fallback_embed, make_embedder

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="portal", description="Row-level tabular transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="masked-cell pre-training over a directory of tables")
    p.add_argument("--data", required=True, help="directory of .csv/.jsonl tables")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sidecar", default=None, help="embedding sidecar command line")
    p.add_argument("--metrics", default=None, help="metrics JSONL path (default: <out>.metrics.jsonl)")

    p = sub.add_parser("finetune", help="fine-tune on a labeled CSV")
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--target", required=True, help="target column name")
    p.add_argument("--task", required=True, choices=["cls", "reg", "classification", "regression"])
    p.add_argument("--from", dest="from_ckpt", default=None, help="pre-training checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--codec", default=None, help=f"regression codec: {', '.join(CODEC_NAMES)}")
    p.add_argument("--bag", type=int, default=None, help="train N bagged members")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sidecar", default=None)
    p.add_argument("--metrics", default=None, help="metrics JSON path (default: <out>.metrics.json)")

    p = sub.add_parser("eval", help="evaluate checkpoint(s) on a test CSV")
    p.add_argument("--model", required=True, nargs="+", help="fine-tuned checkpoint(s)")
    p.add_argument("--test", required=True, help="test CSV")
    p.add_argument("--metrics", default=None, help="write metrics JSON here")
    p.add_argument("--predictions", default=None, help="write predictions CSV here")
    p.add_argument("--top-n", type=int, default=None, help="keep only the best N members by validation score")
    p.add_argument("--sidecar", default=None)

    p = sub.add_parser("inspect", help="print the encoding breakdown of one cell value")
    p.add_argument("--value", required=True)
    p.add_argument("--type", required=True, choices=["number", "date", "text"])
    p.add_argument("--bins", type=int, default=32)

    return parser


def _task_name(raw: str) -> str:
    return {"cls": "classification", "reg": "regression"}.get(raw, raw)


def _make_embedder(config: RunConfig, sidecar_flag: str | None):
    spec = f"sidecar:{sidecar_flag}" if sidecar_flag else config.embedder
    return make_embedder(spec, config.text_dim)


def _log_resolved(config: RunConfig):
    print(json.dumps({"resolved_config": config.resolved()}, sort_keys=True))


def cmd_pretrain(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    _log_resolved(config)
    tables = load_table_dir(args.data)
    embedder = _make_embedder(config, args.sidecar)
    model_config = config.model_config()
    model = build_pretrain_model(model_config, config.seed)
    schedule = ScheduleConfig(peak_lr=config.peak_lr, warmup_fraction=config.warmup_fraction,
                              batch_size=config.batch_size, micro_batch_size=config.micro_batch_size)
    metrics = pretrain(
        tables, model, schedule, config.epochs, config.seed, embedder,
        weights=LossWeights.cascading_uniform(), mask_prob=config.mask_prob,
        valid_rows_per_table=config.valid_rows_per_table,
    )
    save_pretrained(args.out, model, {
        "seed": config.seed,
        "epochs": config.epochs,
        "run": config.resolved(),
        "embedder": {"kind": embedder.kind, "dim": embedder.dim},
        "parameters": count_parameters(model_config),
    })
    metrics_path = args.metrics or args.out + ".metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as f:
        for entry in metrics:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"wrote {args.out} ({len(metrics)} epochs logged to {metrics_path})")
    return EXIT_OK


def _member_path(out: str, index: int) -> str:
    stem, dot, ext = out.rpartition(".")
    if not dot:
        return f"{out}.member{index:02d}"
    return f"{stem}.member{index:02d}.{ext}"


def cmd_finetune(args) -> int:
    overrides = {"seed": args.seed, "codec": args.codec, "bag": args.bag}
    config = load_run_config(args.config, overrides)
    if config.codec not in CODEC_NAMES:
        raise _UsageError(f"unknown codec {config.codec!r}; valid codecs: {', '.join(CODEC_NAMES)}")
    _log_resolved(config)

    task = _task_name(args.task)
    table = load_table_file(args.train)
    if args.target not in table.manifest.column_names():
        raise ManifestError(f"target column {args.target!r} not in {table.manifest.column_names()}")
    manifest = TableManifest(columns=table.manifest.columns, target=args.target, task=task)

    embedder = _make_embedder(config, args.sidecar)
    model_config = config.model_config()
    pretrained_tensors = None
    if args.from_ckpt:
        meta, pre_model = load_pretrained(args.from_ckpt)
        from .checkpoint import state_dict_to_tensors

        pretrained_tensors = state_dict_to_tensors(pre_model.state_dict())
    ft_config = FinetuneConfig(
        task=task, max_epochs=config.max_epochs, patience=config.patience,
        pooling=config.pooling, head_dropout=config.head_dropout,
        peak_lr=config.finetune_lr, batch_size=config.finetune_batch_size,
        valid_fraction=config.valid_fraction,
    )

    n_members = max(1, config.bag)
    members: list[tuple[str, FinetuneResult]] = []
    for i in range(n_members):
        seed = config.seed + i
        codec = make_codec(config.codec) if task == "regression" else None
        result = finetune(table.rows, manifest, model_config, ft_config, embedder, seed,
                          codec=codec, pretrained_tensors=pretrained_tensors)
        path = args.out if n_members == 1 else _member_path(args.out, i)
        save_finetuned(path, result, manifest, {"run": config.resolved()})
        members.append((path, result))
        print(f"member {i}: seed {seed}, best epoch {result.best_epoch}, "
              f"valid score {result.valid_score}")

    report = {
        "task": task,
        "target": args.target,
        "members": [
            {"path": path, "seed": r.seed, "best_epoch": r.best_epoch,
             "valid_score": r.valid_score,
             "history": r.history}
            for path, r in members
        ],
    }
    metrics_path = args.metrics or args.out + ".metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
    print(f"wrote {len(members)} checkpoint(s), report at {metrics_path}")
    return EXIT_OK


def _check_schema(model_manifest: TableManifest, test_manifest: TableManifest):
    model_types = dict(model_manifest.columns)
    mismatches = [
        (name, model_types[name].value, ctype.value)
        for name, ctype in test_manifest.columns
        if name in model_types and model_types[name] is not ctype
    ]
    if mismatches:
        raise ManifestError(f"schema mismatch between model and test file: {mismatches}")
    shared = [name for name, _ in test_manifest.columns
              if name in model_types and name != model_manifest.target]
    if not shared:
        raise ManifestError("test file shares no feature columns with the model")


def cmd_eval(args) -> int:
    loaded = [load_finetuned(path) for path in args.model]
    results = [r for _m, r in loaded]
    first = results[0]
    for r in results[1:]:
        if r.task != first.task or r.target != first.target:
            raise CheckpointError("member checkpoints disagree on task or target")

    model_manifest = TableManifest.from_json_dict(loaded[0][0]["manifest"])
    table = load_table_file(args.test)
    _check_schema(model_manifest, table.manifest)

    run_meta = loaded[0][0].get("run", {})
    config = RunConfig(embedder=run_meta.get("embedder", "fallback"),
                       text_dim=first.model.config.text_dim)
    embedder = _make_embedder(config, args.sidecar)

    if args.top_n is not None and len(results) > 1:
        scores = [r.valid_score if r.valid_score is not None else float("-inf") for r in results]
        keep = select_top_members(scores, min(args.top_n, len(results)))
        results = [results[i] for i in keep]

    member_preds = [predict(r, table.rows, embedder) for r in results]
    ensemble = bag_predictions(member_preds, first.task)

    metrics: dict = {"task": first.task, "target": first.target, "members": []}
    have_target = first.target in table.manifest.column_names()
    truth_labels, truth_values, scored_indices = [], [], []
    if have_target:
        for i, row in enumerate(table.rows):
            value = row.get(first.target)
            if is_missing(value):
                continue
            scored_indices.append(i)
            if first.task == "regression":
                if not isinstance(value, Number):
                    raise ManifestError(f"regression target {first.target!r} has non-numeric cells")
                truth_values.append(value.value)
            else:
                truth_labels.append(label_string(value))

    def score(preds: np.ndarray) -> dict:
        if not have_target or not scored_indices:
            return {}
        if first.task == "classification":
            labels = [first.labels[int(k)] for k in preds[scored_indices].argmax(axis=1)]
            return {"accuracy": accuracy(labels, truth_labels)}
        return {"r2_capped": r2_capped(preds[scored_indices], np.asarray(truth_values))}

    for r, preds in zip(results, member_preds):
        metrics["members"].append({"seed": r.seed, "valid_score": r.valid_score, **score(preds)})
    metrics["ensemble"] = score(ensemble)

    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            if first.task == "classification":
                writer.writerow(["index", "prediction", *[f"p_{lab}" for lab in first.labels]])
                for i, probs in enumerate(ensemble):
                    writer.writerow([i, first.labels[int(np.argmax(probs))],
                                     *[repr(float(p)) for p in probs]])
            else:
                writer.writerow(["index", "prediction"])
                for i, value in enumerate(ensemble):
                    writer.writerow([i, repr(float(value))])

    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as f:
            json.dump(metrics, f, sort_keys=True, indent=1)
    print(json.dumps(metrics["ensemble"] or {"note": "test file has no target column"}, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.type == "number":
        x = parse_numeral(args.value)
        if x is None:
            raise ParseError(f"not a numeral: {args.value!r}", 1)
        t = decompose_number(x)
        weights = soft_bin(t.alpha, args.bins)
        out = {
            "type": "number",
            "value": x,
            "sign": {-1: "-", 0: "zero", 1: "+"}[t.sign],
            "alpha": t.alpha,
            "beta": t.beta,
            "tilde_alpha": tilde_alpha(t.alpha, t.beta),
            "sign_class": t.sign_class,
            "exponent_class": t.exponent_class,
            "fraction_bins": {str(i): w for i, w in enumerate(weights.tolist()) if w > 0},
        }
    elif args.type == "date":
        d = parse_date(args.value)
        if d is None:
            raise ParseError(f"not an ISO-8601 date: {args.value!r}", 1)
        f = date_features(d)
        out = {
            "type": "date",
            "value": d.isoformat(),
            "day": f.day, "month": f.month, "year": f.year,
            "day_class": f.day_class, "month_class": f.month_class, "year_class": f.year_class,
            "day_of_week": f.day_of_week,
            "holidays": [region for region, flag in zip(HOLIDAY_REGIONS, f.holidays) if flag],
        }
    else:
        vec = fallback_embed(args.value)
        out = {
            "type": "text",
            "value": args.value,
            "dim": int(vec.shape[0]),
            "l2_norm": float(np.linalg.norm(vec)),
            "head": [round(float(v), 6) for v in vec[:8]],
        }
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}

_DATA_ERRORS = (ParseError, ManifestError, CheckpointError, EmbedderConfigError,
                SidecarTransportError, EmptyRowError, FileNotFoundError,
                NotADirectoryError, IsADirectoryError, CodecError, ValueError)
_TRAINING_ERRORS = (TrainingDivergedError, CodecFailureError)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _TRAINING_ERRORS as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
