"""Command-line entry point: ``fedbayes {fit,federate,experiment,compare}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dataset import DEFAULT_MIN_CLIENT_SIZE, dump_splits, load_dataset, make_folds, partition_clients
from .exceptions import FedBayesError
from .experiment import ExperimentConfig, parse_iters, read_records, run_experiment, summarize, write_summary
from .federation import ClientState, run_federation
from .generative import fit_counts, normalize
from .optimize import OptimizerConfig


def _class_col(value):
    try:
        return int(value)
    except ValueError:
        return value


def _add_data_args(p):
    p.add_argument("--data", required=True, help="CSV or ARFF file")
    p.add_argument("--class-col", type=_class_col, default=-1, help="class column index or name (default: last)")
    p.add_argument("--header", action="store_true", help="CSV has a header row")
    p.add_argument("--missing", choices=("category", "mask"), default="category", help="encoding of '?' cells")


def _load(args):
    return load_dataset(args.data, class_col=args.class_col, header=args.header, missing=args.missing)


def cmd_fit(args):
    data = _load(args)
    params = normalize(fit_counts(data), args.alpha)
    doc = params.to_dict()
    doc["feature_names"] = list(data.schema.feature_names)
    doc["feature_values"] = [list(v) for v in data.schema.feature_values]
    doc["class_labels"] = list(data.schema.class_labels)
    Path(args.out).write_text(json.dumps(doc))
    print(f"fitted {data.n_samples} instances, {params.layout.size} parameters -> {args.out}")
    return 0


_TRACE_COLUMNS = [
    "round", "client_id", "objective", "iters_used",
    "train_acc", "test_acc", "global_train_acc", "global_test_acc",
]


def cmd_federate(args):
    data = _load(args)
    partition = partition_clients(data, args.clients, args.seed, args.min_client_size)
    shards = [partition.rows(c) for c in range(args.clients)]
    folds = [make_folds(data.y[rows], args.folds, args.seed, client_id=c) for c, rows in enumerate(shards)]
    if not 0 <= args.fold < args.folds:
        raise FedBayesError(f"--fold must lie in [0, {args.folds})")
    if args.dump_splits:
        dump_splits(args.dump_splits, partition, folds)
    clients = []
    for c, rows in enumerate(shards):
        tr, te = folds[c].train_test(args.fold)
        clients.append(ClientState.fit(c, data, rows[tr], rows[te], args.alpha))
    opt = OptimizerConfig(max_iterations=parse_iters(args.opt_iters))

    message_dir = Path(args.message_dir) if args.message_dir else None
    if message_dir:
        message_dir.mkdir(parents=True, exist_ok=True)

    def on_round(record, messages):
        print(
            f"round {record.round:3d}  global train {100 * record.global_train_acc:6.2f}  "
            f"test {100 * record.global_test_acc:6.2f}"
        )
        if message_dir:
            for m in messages:
                stem = message_dir / f"round{m.round:04d}_client{m.client_id:04d}"
                if args.message_format == "json":
                    stem.with_suffix(".json").write_text(m.to_json())
                else:
                    stem.with_suffix(".fnbw").write_bytes(m.to_bytes())

    result = run_federation(
        clients, args.rounds, opt, args.seed,
        aggregation=args.aggregation, message_format=args.message_format,
        n_jobs=args.jobs, on_round=on_round,
    )
    if args.trace_dir:
        trace_dir = Path(args.trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        with open(trace_dir / "rounds.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_TRACE_COLUMNS)
            for record in result.records:
                for s in record.per_client:
                    writer.writerow([
                        record.round, s.client_id, repr(s.objective), s.iterations_used,
                        repr(s.train_acc), repr(s.test_acc),
                        repr(s.global_train_acc), repr(s.global_test_acc),
                    ])
    if args.out:
        Path(args.out).write_text(json.dumps({
            "schema_hash": f"{clients[0].params.layout.schema_hash():016x}",
            "rounds": args.rounds,
            "weights": [float(v) for v in result.global_weights],
        }))
    final = result.records[-1]
    print(f"final global test accuracy {100 * final.global_test_acc:.2f}")
    return 0


def cmd_experiment(args):
    config = ExperimentConfig.from_json(args.config)
    result = run_experiment(config, output_dir=args.output_dir, jobs=args.jobs)
    out = Path(args.output_dir or config.output_dir)
    print((out / "summary.txt").read_text(), end="")
    for line in result.skipped:
        print(f"skipped: {line}")
    return 0


def cmd_compare(args):
    rows = summarize(read_records(args.records))
    text = Path(args.text) if args.text else None
    write_summary(rows, args.out, text)
    print(f"{len(rows)} summary rows -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fedbayes", description="Federated weighted naive Bayes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a generative naive Bayes table")
    _add_data_args(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("federate", help="simulate one federation on one fold")
    _add_data_args(p)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--opt-iters", default="5", help="local L-BFGS cap per round, or 'inf'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold", type=int, default=0, help="fold held out on every client")
    p.add_argument("--min-client-size", type=int, default=DEFAULT_MIN_CLIENT_SIZE)
    p.add_argument("--aggregation", choices=("uniform", "weighted"), default="uniform")
    p.add_argument("--message-format", choices=("binary", "json"), default="binary")
    p.add_argument("--message-dir", help="write every round's messages here")
    p.add_argument("--trace-dir", help="write rounds.csv here")
    p.add_argument("--dump-splits", help="write the client/fold assignment as JSON")
    p.add_argument("--out", help="write the final global weights as JSON")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_federate)

    p = sub.add_parser("experiment", help="run a configured experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="overrides the config's output_dir")
    p.add_argument("--jobs", type=int, help="overrides the config's jobs")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare", help="summarise records.csv files")
    p.add_argument("--records", required=True, help="records.csv or a directory searched recursively")
    p.add_argument("--out", required=True)
    p.add_argument("--text", help="also write the aligned text table here")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FedBayesError, ValueError, OSError) as exc:
        print(f"fedbayes: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
