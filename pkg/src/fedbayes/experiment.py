"""Experiment harness: partition, cross-validate, federate, summarise.

For every dataset, client count and repetition the instances are split
stratifiedly among the clients and each client's shard is split into K
stratified folds. Fold f is held out on every client at once, so one
federation is run per fold index. Four algorithms are evaluated on the
same geometry:

``nb``
    generative naive Bayes trained by each client alone.
``nb_fed``
    generative naive Bayes on the pooled count tables of all clients.
``nbw``
    weighted naive Bayes trained by each client alone, from unit weights,
    with an iteration cap of L (variants ``"5"``, ``"inf"``).
``fednbw``
    federated weighted naive Bayes, evaluated with the final global
    weights (``"g5"``, ``"ginf"``) and after one personalising local
    optimisation (``"l5"``, ``"linf"``).

Accuracy is computed per (client, fold) as correct/total and then averaged
with equal weight over clients, folds and repetitions.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import derive_rng, load_dataset, make_folds, partition_clients
from .exceptions import PartitionError
from .federation import ClientState, personalize, run_federation
from .generative import fit_counts, normalize, pool_counts, predict
from .optimize import UNLIMITED_ITERATIONS, OptimizerConfig, minimize

log = logging.getLogger(__name__)

ALGORITHMS = ("nb", "nb_fed", "nbw", "fednbw")

__all__ = [
    "ALGORITHMS",
    "ExperimentConfig",
    "MetricsRecord",
    "TraceRow",
    "run_cell",
    "run_experiment",
    "summarize",
    "emit_traces",
    "write_records",
    "read_records",
    "write_summary",
]


def parse_iters(value):
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity", "∞")):
        return UNLIMITED_ITERATIONS
    value = int(value)
    if value < 0:
        raise ValueError("iteration caps must be >= 0")
    return value


def iters_label(cap):
    return "inf" if cap >= UNLIMITED_ITERATIONS else str(cap)


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment run.

    ``datasets`` entries are file paths, or dicts with ``path`` and optional
    ``name``, ``class_col``, ``header`` and ``format`` keys. ``opt_iters``
    accepts integers and ``"inf"``.
    """

    datasets: list = field(default_factory=list)
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    client_counts: list = field(default_factory=lambda: [5, 10, 20, 50, 100])
    folds: int = 5
    repetitions: int = 5
    master_seed: int = 0
    opt_iters: list = field(default_factory=lambda: [5, "inf"])
    rounds: int = 50
    alpha: float = 1.0
    output_dir: str = "results"
    min_client_size: int = 5
    aggregation: str = "uniform"
    memory: int = 10
    grad_tolerance: float = 1e-5
    message_format: str = "binary"
    jobs: int = 1

    def __post_init__(self):
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}")
        if min(self.client_counts, default=1) < 1 or self.folds < 2 or self.repetitions < 1:
            raise ValueError("client counts, folds and repetitions must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        self.opt_iters = [parse_iters(v) for v in self.opt_iters]

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        cfg = cls.from_dict(json.loads(path.read_text()))
        # Relative dataset paths are resolved against the config file.
        resolved = []
        for entry in cfg.datasets:
            entry = dict(entry) if isinstance(entry, dict) else {"path": entry}
            p = Path(entry["path"])
            if not p.is_absolute():
                entry["path"] = str((path.parent / p).resolve())
            resolved.append(entry)
        cfg.datasets = resolved
        return cfg

    def optimizer(self, cap):
        return OptimizerConfig(
            max_iterations=cap, memory=self.memory, grad_tolerance=self.grad_tolerance
        )


@dataclass
class MetricsRecord:
    dataset: str
    algorithm: str
    variant: str
    client_count: int
    repetition: int
    client_id: int
    fold: int
    split: str
    accuracy: float


@dataclass
class TraceRow:
    """Per-round accuracy sums for one (algorithm, variant) within one cell."""

    algorithm: str
    variant: str
    round: int
    train_sum: float
    test_sum: float
    n: int


def repetition_seed(master_seed, repetition):
    return int(derive_rng(master_seed, "repetition", repetition).integers(0, 2**62))


def _dataset_entry(entry):
    entry = dict(entry) if isinstance(entry, dict) else {"path": entry}
    path = Path(entry["path"])
    name = entry.get("name") or path.stem
    data = load_dataset(
        path,
        entry.get("format"),
        class_col=entry.get("class_col", -1),
        header=entry.get("header", False),
    )
    return name, data


class _Recorder:
    def __init__(self, dataset, client_count, repetition):
        self.key = (dataset, client_count, repetition)
        self.records = []
        self.traces = {}

    def add(self, algorithm, variant, client_id, fold, train_acc, test_acc):
        dataset, C, rep = self.key
        for split, acc in (("train", train_acc), ("test", test_acc)):
            self.records.append(
                MetricsRecord(dataset, algorithm, variant, C, rep, client_id, fold, split, float(acc))
            )

    def trace(self, algorithm, variant, rnd, train_acc, test_acc):
        key = (algorithm, variant, rnd)
        row = self.traces.get(key)
        if row is None:
            row = self.traces[key] = TraceRow(algorithm, variant, rnd, 0.0, 0.0, 0)
        row.train_sum += train_acc
        row.test_sum += test_acc
        row.n += 1


def _accuracy(params, data, rows):
    pred = predict(params, data.X[rows], data.missing[rows])
    return float(np.mean(pred == data.y[rows]))


def run_cell(data, name, client_count, repetition, config: ExperimentConfig):
    """Run every configured algorithm for one (dataset, C, repetition).

    Returns
    -------
    records : list of MetricsRecord
    traces : list of TraceRow

    Raises
    ------
    PartitionError
        When the dataset is too small for ``client_count`` clients.
    """
    seed = repetition_seed(config.master_seed, repetition)
    partition = partition_clients(data, client_count, seed, config.min_client_size)
    shards = [partition.rows(c) for c in range(client_count)]
    folds = [
        make_folds(data.y[rows], config.folds, seed, client_id=c)
        for c, rows in enumerate(shards)
    ]
    rec = _Recorder(name, client_count, repetition)
    T = config.rounds
    algorithms = set(config.algorithms)

    for f in range(config.folds):
        train_rows, test_rows = [], []
        for c, rows in enumerate(shards):
            tr, te = folds[c].train_test(f)
            train_rows.append(rows[tr])
            test_rows.append(rows[te])

        if "nb" in algorithms:
            for c in range(client_count):
                params = normalize(fit_counts(data, train_rows[c]), config.alpha)
                acc = (_accuracy(params, data, train_rows[c]), _accuracy(params, data, test_rows[c]))
                rec.add("nb", "-", c, f, *acc)
                for t in range(1, T + 1):
                    rec.trace("nb", "-", t, *acc)

        if "nb_fed" in algorithms:
            pooled = normalize(
                pool_counts(fit_counts(data, rows) for rows in train_rows), config.alpha
            )
            for c in range(client_count):
                acc = (_accuracy(pooled, data, train_rows[c]), _accuracy(pooled, data, test_rows[c]))
                rec.add("nb_fed", "-", c, f, *acc)
                for t in range(1, T + 1):
                    rec.trace("nb_fed", "-", t, *acc)

        if not algorithms & {"nbw", "fednbw"}:
            continue
        clients = [
            ClientState.fit(c, data, train_rows[c], test_rows[c], config.alpha)
            for c in range(client_count)
        ]

        if "nbw" in algorithms:
            for cap in config.opt_iters:
                label = iters_label(cap)
                opt = config.optimizer(cap)
                for client in clients:
                    w = minimize(client.train, np.ones(client.dimension), opt).final_point
                    acc = (client.accuracy(w, "train"), client.accuracy(w, "test"))
                    rec.add("nbw", label, client.client_id, f, *acc)
                    for t in range(1, T + 1):
                        rec.trace("nbw", label, t, *acc)

        if "fednbw" in algorithms:
            fed_seed = int(derive_rng(seed, "federation", f).integers(0, 2**62))
            for cap in config.opt_iters:
                label = iters_label(cap)
                opt = config.optimizer(cap)
                result = run_federation(
                    clients,
                    T,
                    opt,
                    fed_seed,
                    aggregation=config.aggregation,
                    message_format=config.message_format,
                )
                final = result.global_weights
                for client in clients:
                    rec.add(
                        "fednbw", "g" + label, client.client_id, f,
                        client.accuracy(final, "train"), client.accuracy(final, "test"),
                    )
                personal = []
                for client in clients:
                    w = personalize(client, final, opt)
                    acc = (client.accuracy(w, "train"), client.accuracy(w, "test"))
                    personal.append(acc)
                    rec.add("fednbw", "l" + label, client.client_id, f, *acc)
                records = result.records
                for t, record in enumerate(records, start=1):
                    for s in record.per_client:
                        rec.trace("fednbw", "g" + label, t, s.global_train_acc, s.global_test_acc)
                    # Personalising the round-t global weights is exactly the
                    # local step of round t+1.
                    if t < T:
                        for s in records[t].per_client:
                            rec.trace("fednbw", "l" + label, t, s.train_acc, s.test_acc)
                    else:
                        for acc in personal:
                            rec.trace("fednbw", "l" + label, t, *acc)
    return rec.records, list(rec.traces.values())


# ---------------------------------------------------------------------------
# Driver


_DATA_CACHE = {}


def _load_cached(entry):
    key = json.dumps(entry, sort_keys=True) if isinstance(entry, dict) else str(entry)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = _dataset_entry(entry)
    return _DATA_CACHE[key]


def _run_task(task):
    entry, client_count, repetition, config = task
    name, data = _load_cached(entry)
    try:
        records, traces = run_cell(data, name, client_count, repetition, config)
    except PartitionError as exc:
        return name, client_count, repetition, None, None, str(exc)
    return name, client_count, repetition, records, traces, None


@dataclass
class ExperimentResult:
    records: list
    traces: dict
    skipped: list


def run_experiment(config: ExperimentConfig, output_dir=None, jobs=None) -> ExperimentResult:
    """Run the full grid and write every artefact to ``output_dir``.

    Files written: ``records.csv``, ``summary.csv``, ``summary.txt``,
    ``traces/<dataset>_<C>.csv`` and ``skipped_cells.log``. Their contents do
    not depend on ``jobs``.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    jobs = config.jobs if jobs is None else jobs
    tasks = [
        (entry, C, r, config)
        for entry in config.datasets
        for C in config.client_counts
        for r in range(config.repetitions)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    records, skipped = [], []
    traces = {}
    for name, C, _, cell_records, cell_traces, error in results:
        if error is not None:
            line = f"dataset={name} clients={C} reason={error}"
            if line not in skipped:
                skipped.append(line)
                log.warning("skipping %s", line)
            continue
        records.extend(cell_records)
        merged = traces.setdefault((name, C), {})
        for row in cell_traces:
            key = (row.algorithm, row.variant, row.round)
            if key in merged:
                acc = merged[key]
                acc.train_sum += row.train_sum
                acc.test_sum += row.test_sum
                acc.n += row.n
            else:
                merged[key] = TraceRow(**asdict(row))
    traces = {k: list(v.values()) for k, v in traces.items()}

    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    rows = summarize(records)
    write_summary(rows, out / "summary.csv", out / "summary.txt")
    emit_traces(traces, out / "traces")
    (out / "skipped_cells.log").write_text("".join(line + "\n" for line in skipped))
    return ExperimentResult(records, traces, skipped)


# ---------------------------------------------------------------------------
# Artefacts


_RECORD_FIELDS = [f.name for f in fields(MetricsRecord)]


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_RECORD_FIELDS)
        for r in records:
            writer.writerow([getattr(r, k) if k != "accuracy" else repr(r.accuracy) for k in _RECORD_FIELDS])


def read_records(path):
    """Read ``records.csv`` (or every ``records.csv`` below a directory)."""
    path = Path(path)
    files = sorted(path.rglob("records.csv")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no records.csv under {path}")
    records = []
    for file in files:
        with open(file, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    MetricsRecord(
                        row["dataset"], row["algorithm"], row["variant"],
                        int(row["client_count"]), int(row["repetition"]),
                        int(row["client_id"]), int(row["fold"]), row["split"],
                        float(row["accuracy"]),
                    )
                )
    return records


@dataclass
class SummaryRow:
    dataset: str
    algorithm: str
    variant: str
    client_count: int
    train_acc: float
    test_acc: float
    n_runs: int


def method_label(algorithm, variant):
    return algorithm if variant == "-" else f"{algorithm}:{variant}"


def summarize(records):
    """Mean accuracy in percent per (dataset, algorithm, variant, C).

    Every (repetition, client, fold) counts once. A ``Mean`` dataset row per
    (algorithm, variant, C) averages over the datasets present for that C.
    Rows follow the order of first appearance in ``records``.
    """
    sums = {}
    for r in records:
        key = (r.dataset, r.algorithm, r.variant, r.client_count)
        cell = sums.setdefault(key, {"train": [0.0, 0], "test": [0.0, 0]})
        cell[r.split][0] += r.accuracy
        cell[r.split][1] += 1
    rows = []
    for (ds, alg, var, C), cell in sums.items():
        tr, te = cell["train"], cell["test"]
        rows.append(
            SummaryRow(
                ds, alg, var, C,
                100.0 * tr[0] / tr[1] if tr[1] else float("nan"),
                100.0 * te[0] / te[1] if te[1] else float("nan"),
                te[1],
            )
        )
    means = {}
    for row in rows:
        means.setdefault((row.algorithm, row.variant, row.client_count), []).append(row)
    for (alg, var, C), group in means.items():
        rows.append(
            SummaryRow(
                "Mean", alg, var, C,
                float(np.mean([g.train_acc for g in group])),
                float(np.mean([g.test_acc for g in group])),
                len(group),
            )
        )
    return rows


def _fmt(x):
    return "nan" if x != x else f"{x:.4f}"


def write_summary(rows, csv_path, text_path=None):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "algorithm", "variant", "client_count", "train_acc", "test_acc", "n"])
        for r in rows:
            writer.writerow(
                [r.dataset, r.algorithm, r.variant, r.client_count, _fmt(r.train_acc), _fmt(r.test_acc), r.n_runs]
            )
    if text_path is not None:
        Path(text_path).write_text(format_table(rows))


def format_table(rows):
    """Test accuracy pivoted to datasets x (clients, method), aligned text."""
    datasets, methods, counts = [], [], []
    value = {}
    for r in rows:
        m = method_label(r.algorithm, r.variant)
        for seq, item in ((datasets, r.dataset), (methods, m), (counts, r.client_count)):
            if item not in seq:
                seq.append(item)
        value[(r.dataset, r.client_count, m)] = r.test_acc
    datasets = [d for d in datasets if d != "Mean"] + (["Mean"] if "Mean" in datasets else [])
    counts = sorted(counts)
    header = ["dataset"] + [f"C={C} {m}" for C in counts for m in methods]
    body = [
        [d] + [
            f"{value[(d, C, m)]:.2f}" if (d, C, m) in value else "-"
            for C in counts for m in methods
        ]
        for d in datasets
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    buf = io.StringIO()
    for row in [header] + body:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        buf.write("  ".join(cells).rstrip() + "\n")
    return buf.getvalue()


def emit_traces(traces, directory):
    """Write ``<dataset>_<C>.csv`` with one row per (round, algorithm, variant).

    Columns: ``round, algorithm, variant, train_acc, test_acc, n`` where the
    accuracies are means in percent over every (repetition, client, fold).
    Baselines that do not iterate appear as constant rows.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for (name, C), rows in traces.items():
        path = directory / f"{name}_{C}.csv"
        ordered = sorted(rows, key=lambda r: r.round)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["round", "algorithm", "variant", "train_acc", "test_acc", "n"])
            for r in ordered:
                writer.writerow(
                    [r.round, r.algorithm, r.variant,
                     _fmt(100.0 * r.train_sum / r.n), _fmt(100.0 * r.test_sum / r.n), r.n]
                )
        written.append(path)
    return written
