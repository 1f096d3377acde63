"""Discrete dataset loading, stratified client partitioning and CV folds.

Every categorical value is encoded as an integer index into its column's
category list. CSV categories are ordered by first appearance, ARFF
categories by their declaration order.

Randomness is derived from a single master seed per repetition with
:func:`derive_rng`, keyed by a purpose tag and optional ids (for example
``("folds", client_id)``), so that adding a client never changes the
streams used by the clients before it.
"""

from __future__ import annotations

import csv
import io
import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FoldError, ParseError, PartitionError, SchemaError

MISSING_TOKEN = "?"
# A client must hold at least one instance per CV fold.
DEFAULT_MIN_CLIENT_SIZE = 5

__all__ = [
    "Schema",
    "DiscreteDataset",
    "ClientPartition",
    "FoldSplit",
    "load_dataset",
    "derive_rng",
    "partition_clients",
    "make_folds",
    "dump_splits",
]


@dataclass(frozen=True)
class Schema:
    """Names and category lists of the features and the class."""

    feature_names: tuple[str, ...]
    feature_values: tuple[tuple[str, ...], ...]
    class_labels: tuple[str, ...]
    class_name: str = "class"

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(
            self, "feature_values", tuple(tuple(v) for v in self.feature_values)
        )
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        if len(self.feature_names) < 1:
            raise SchemaError("a dataset needs at least one feature")
        if len(self.feature_names) != len(self.feature_values):
            raise SchemaError("feature_names and feature_values differ in length")
        for name, values in zip(self.feature_names, self.feature_values):
            if len(values) < 1:
                raise SchemaError(f"feature {name!r} has no categories")
        if len(self.class_labels) < 2:
            raise SchemaError(
                f"need at least 2 class labels, got {len(self.class_labels)}"
            )

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.feature_values)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    @classmethod
    def from_cardinalities(cls, cardinalities, n_classes):
        """Anonymous schema (``x0``, ``x1``, ... / ``0``, ``1``, ...)."""
        return cls(
            feature_names=[f"x{j}" for j in range(len(cardinalities))],
            feature_values=[[str(v) for v in range(c)] for c in cardinalities],
            class_labels=[str(k) for k in range(n_classes)],
        )


@dataclass(frozen=True, eq=False)
class DiscreteDataset:
    """Integer-encoded instances.

    Parameters
    ----------
    schema : Schema
    X : ndarray of shape (m, n), int
        Category index of every cell. Masked cells hold 0.
    y : ndarray of shape (m,), int
        Class index of every instance.
    missing : ndarray of shape (m, n), bool, optional
        True where the value is unknown. Defaults to all False.
    name : str
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray
    missing: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise SchemaError("X must be two-dimensional")
        missing = (
            np.zeros(X.shape, dtype=bool)
            if self.missing is None
            else np.ascontiguousarray(self.missing, dtype=bool)
        )
        m, n = X.shape
        if y.shape != (m,) or missing.shape != (m, n):
            raise SchemaError(
                f"row counts disagree: X {X.shape}, y {y.shape}, missing {missing.shape}"
            )
        if n != self.schema.n_features:
            raise SchemaError(
                f"X has {n} columns but the schema declares {self.schema.n_features}"
            )
        card = np.asarray(self.schema.cardinalities)
        bad = ~missing & ((X < 0) | (X >= card))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise SchemaError(f"value index {X[i, j]} out of range at row {i}, column {j}")
        if ((y < 0) | (y >= self.schema.n_classes)).any():
            raise SchemaError("class index out of range")
        X = np.where(missing, 0, X)
        for arr in (X, y, missing):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "missing", missing)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.schema.n_classes

    def __len__(self):
        return self.n_samples

    def subset(self, rows) -> "DiscreteDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return DiscreteDataset(
            self.schema, self.X[rows], self.y[rows], self.missing[rows], name=self.name
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


# --------------------------------------------------------------------------
# Loading


def load_dataset(
    path,
    format=None,
    *,
    class_col=-1,
    header=False,
    missing="category",
) -> DiscreteDataset:
    """Read a categorical CSV or ARFF file.

    Parameters
    ----------
    path : str or Path
    format : {"csv", "arff"}, optional
        Inferred from the file suffix when omitted.
    class_col : int or str, default=-1
        Index or name of the class column.
    header : bool, default=False
        CSV only: whether the first row holds column names.
    missing : {"category", "mask"}, default="category"
        How ``?`` cells are encoded. ``"category"`` appends ``?`` as one more
        category of every feature in which it occurs; ``"mask"`` keeps the
        cell in the missing mask so that it is skipped by counting and
        scoring.
    """
    path = Path(path)
    if format is None:
        format = "arff" if path.suffix.lower() == ".arff" else "csv"
    if format not in ("csv", "arff"):
        raise ValueError(f"unknown format {format!r}")
    if missing not in ("category", "mask"):
        raise ValueError(f"unknown missing-value policy {missing!r}")
    text = path.read_text()
    if format == "arff":
        names, declared, rows, relation = _parse_arff(text)
    else:
        names, rows = _parse_csv(text, header)
        declared = [None] * len(names)
        relation = path.stem
    return _encode(names, declared, rows, class_col, missing, relation or path.stem)


def _parse_csv(text, header):
    reader = csv.reader(io.StringIO(text), skipinitialspace=True)
    names = None
    rows = []
    width = None
    for lineno, record in enumerate(reader, start=1):
        if not record or all(not c.strip() for c in record):
            continue
        record = [c.strip() for c in record]
        if width is None:
            width = len(record)
        elif len(record) != width:
            raise ParseError(f"expected {width} fields, found {len(record)}", lineno)
        if header and names is None:
            names = record
            continue
        rows.append((lineno, record))
    if width is None:
        raise SchemaError("empty dataset")
    if names is None:
        names = [f"V{j + 1}" for j in range(width)]
    for j in range(width):
        _reject_continuous(names[j], [r[j] for _, r in rows])
    return names, rows


def _reject_continuous(name, values):
    seen_fraction = False
    for v in values:
        if v == MISSING_TOKEN:
            continue
        try:
            f = float(v)
        except ValueError:
            return
        if not f.is_integer():
            seen_fraction = True
    if seen_fraction:
        raise SchemaError(
            f"column {name!r} holds non-integer numbers; discretise it first"
        )


_ATTR_RE = re.compile(
    r"""^@attribute\s+('(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*"|\S+)\s+(.*)$""", re.I
)


def _split_values(text):
    reader = csv.reader([text], quotechar="'", skipinitialspace=True, escapechar="\\")
    out = [v.strip() for v in next(reader)]
    return [v[1:-1] if len(v) >= 2 and v[0] == v[-1] == '"' else v for v in out]


def _parse_arff(text):
    names, declared, rows = [], [], []
    relation = ""
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            low = line.lower()
            if low.startswith("@relation"):
                relation = line[len("@relation"):].strip().strip("'\"")
            elif low.startswith("@attribute"):
                m = _ATTR_RE.match(line)
                if m is None:
                    raise ParseError("malformed @attribute line", lineno)
                name, spec = m.group(1), m.group(2).strip()
                if name[0] in "'\"":
                    name = name[1:-1]
                if spec.startswith("{"):
                    if not spec.endswith("}"):
                        raise ParseError(f"unterminated category list for {name!r}", lineno)
                    values = _split_values(spec[1:-1])
                    if len(set(values)) != len(values):
                        raise ParseError(f"duplicate category in {name!r}", lineno)
                    declared.append(values)
                else:
                    raise SchemaError(
                        f"attribute {name!r} (line {lineno}) is {spec.split()[0]!r}, "
                        "not a declared category list"
                    )
                names.append(name)
            elif low.startswith("@data"):
                if not names:
                    raise ParseError("@data before any @attribute", lineno)
                in_data = True
            else:
                raise ParseError(f"unexpected header line {line[:40]!r}", lineno)
            continue
        if line.startswith("{"):
            raise ParseError("sparse ARFF rows are not supported", lineno)
        values = _split_values(line)
        if len(values) != len(names):
            raise ParseError(
                f"expected {len(names)} values, found {len(values)}", lineno
            )
        rows.append((lineno, values))
    if not in_data:
        raise ParseError("no @data section")
    return names, declared, rows, relation


def _resolve_class_col(class_col, names):
    if isinstance(class_col, str):
        if class_col not in names:
            raise SchemaError(f"no column named {class_col!r}")
        return names.index(class_col)
    idx = int(class_col)
    if not -len(names) <= idx < len(names):
        raise SchemaError(f"class column {class_col} out of range")
    return idx % len(names)


def _encode(names, declared, rows, class_col, missing, relation):
    if not rows:
        raise SchemaError("empty dataset")
    c = _resolve_class_col(class_col, names)
    feat_idx = [j for j in range(len(names)) if j != c]
    m = len(rows)

    def categories(j):
        if declared[j] is not None:
            return list(declared[j])
        seen = {}
        for _, r in rows:
            v = r[j]
            if v != MISSING_TOKEN and v not in seen:
                seen[v] = len(seen)
        return list(seen)

    class_labels = categories(c)
    class_lookup = {v: k for k, v in enumerate(class_labels)}
    y = np.empty(m, dtype=np.int64)
    for i, (lineno, r) in enumerate(rows):
        v = r[c]
        if v == MISSING_TOKEN:
            raise SchemaError(f"line {lineno}: missing class label")
        if v not in class_lookup:
            raise ParseError(f"undeclared class label {v!r}", lineno)
        y[i] = class_lookup[v]

    X = np.zeros((m, len(feat_idx)), dtype=np.int64)
    mask = np.zeros((m, len(feat_idx)), dtype=bool)
    feature_values = []
    for out_j, j in enumerate(feat_idx):
        values = categories(j)
        lookup = {v: k for k, v in enumerate(values)}
        has_missing = False
        for i, (lineno, r) in enumerate(rows):
            v = r[j]
            if v == MISSING_TOKEN:
                has_missing = True
                mask[i, out_j] = True
            elif v in lookup:
                X[i, out_j] = lookup[v]
            else:
                raise ParseError(f"undeclared value {v!r} for {names[j]!r}", lineno)
        if has_missing and missing == "category":
            X[mask[:, out_j], out_j] = len(values)
            mask[:, out_j] = False
            values = values + [MISSING_TOKEN]
        feature_values.append(values)

    schema = Schema(
        feature_names=[names[j] for j in feat_idx],
        feature_values=feature_values,
        class_labels=class_labels,
        class_name=names[c],
    )
    return DiscreteDataset(schema, X, y, mask, name=relation)


# --------------------------------------------------------------------------
# Seeding, partitions and folds


def derive_rng(master_seed, purpose, *ids) -> np.random.Generator:
    """Independent generator for ``(master_seed, purpose, *ids)``."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(tag, *(int(i) for i in ids)),
    )
    return np.random.default_rng(ss)


@dataclass(frozen=True, eq=False)
class ClientPartition:
    assignments: np.ndarray
    client_count: int
    seed: int

    def rows(self, client) -> np.ndarray:
        """Instance indices held by ``client``, ascending."""
        return np.flatnonzero(self.assignments == client)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.client_count)


@dataclass(frozen=True, eq=False)
class FoldSplit:
    fold_ids: np.ndarray
    fold_count: int
    seed: int

    def train_test(self, fold):
        """Positions (into the shard) of the training and held-out rows."""
        test = np.flatnonzero(self.fold_ids == fold)
        train = np.flatnonzero(self.fold_ids != fold)
        return train, test


def _stratified_deal(labels, n_bins, rng):
    # Shuffle within each class, lay the classes end to end and deal the
    # sequence round-robin: per-class bin counts are floor/ceil of the exact
    # share and bin totals differ by at most one.
    labels = np.asarray(labels)
    order = []
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        order.append(members[rng.permutation(len(members))])
    order = np.concatenate(order) if order else np.empty(0, dtype=np.int64)
    bins = np.empty(len(labels), dtype=np.int64)
    bins[order] = np.arange(len(order)) % n_bins
    return bins


def partition_clients(
    data: DiscreteDataset,
    client_count: int,
    seed: int,
    min_client_size: int = DEFAULT_MIN_CLIENT_SIZE,
) -> ClientPartition:
    """Split instances among ``client_count`` clients, stratified by class.

    Raises
    ------
    PartitionError
        If the smallest client would hold fewer than ``min_client_size``
        instances.
    """
    if client_count < 1:
        raise PartitionError(f"client_count must be positive, got {client_count}")
    m = data.n_samples
    required = client_count * min_client_size
    if m // client_count < min_client_size:
        raise PartitionError(
            f"{data.name or 'dataset'} has {m} instances, and {required} are required "
            f"for {client_count} clients of at least {min_client_size} "
            f"(short by {required - m})"
        )
    rng = derive_rng(seed, "partition", client_count)
    assignments = _stratified_deal(data.y, client_count, rng)
    assignments.setflags(write=False)
    return ClientPartition(assignments, client_count, seed)


def make_folds(labels, fold_count: int, seed: int, client_id: int = 0) -> FoldSplit:
    """Stratified ``fold_count``-fold assignment of a shard.

    ``labels`` is either a class-index vector or a :class:`DiscreteDataset`.
    """
    if isinstance(labels, DiscreteDataset):
        labels = labels.y
    labels = np.asarray(labels)
    if fold_count < 1:
        raise FoldError(f"fold_count must be positive, got {fold_count}")
    if len(labels) < fold_count:
        raise FoldError(
            f"shard of {len(labels)} instances cannot be split into {fold_count} folds"
        )
    rng = derive_rng(seed, "folds", client_id)
    fold_ids = _stratified_deal(labels, fold_count, rng)
    fold_ids.setflags(write=False)
    return FoldSplit(fold_ids, fold_count, seed)


def dump_splits(path, partition: ClientPartition, folds: list[FoldSplit]):
    """Write ``{instance: [client, fold]}`` as JSON for auditing."""
    mapping = {}
    for c in range(partition.client_count):
        rows = partition.rows(c)
        for pos, i in enumerate(rows):
            mapping[str(int(i))] = [c, int(folds[c].fold_ids[pos])]
    doc = {
        "client_count": partition.client_count,
        "fold_count": folds[0].fold_count if folds else 0,
        "seed": partition.seed,
        "assignments": dict(sorted(mapping.items(), key=lambda kv: int(kv[0]))),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
