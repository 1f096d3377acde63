"""Counting-based naive Bayes: count tables, MLE/Laplace parameters, MAP rule.

All parameter-shaped vectors (counts, log-probabilities, weights) share one
flat layout, described by :class:`Layout`::

    [ class 0 .. class o-1 | feature 0: value 0 (classes 0..o-1), value 1 (...), ... | feature 1 ... ]

i.e. the ``o`` class entries first, then feature-major, value-major,
class-minor conditional entries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FitError, PoolError, SchemaError

LAYOUT_VERSION = 1

__all__ = [
    "Layout",
    "CountTable",
    "ParamTable",
    "fit_counts",
    "normalize",
    "log_joint",
    "predict",
    "pool_counts",
]


class Layout:
    """Index arithmetic for the flat parameter vector."""

    def __init__(self, cardinalities, n_classes):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.n_classes = int(n_classes)
        if self.n_classes < 1 or any(c < 1 for c in self.cardinalities):
            raise SchemaError("cardinalities and class count must be positive")
        o = self.n_classes
        sizes = np.asarray(self.cardinalities, dtype=np.int64) * o
        self.offsets = o + np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.size = int(o + sizes.sum())

    @classmethod
    def from_schema(cls, schema):
        return cls(schema.cardinalities, schema.n_classes)

    @property
    def n_features(self):
        return len(self.cardinalities)

    def __eq__(self, other):
        return (
            isinstance(other, Layout)
            and self.cardinalities == other.cardinalities
            and self.n_classes == other.n_classes
        )

    def __hash__(self):
        return hash((self.cardinalities, self.n_classes))

    def __repr__(self):
        return f"Layout(cardinalities={self.cardinalities}, n_classes={self.n_classes})"

    def schema_hash(self) -> int:
        """64-bit digest of (cardinalities, class count, layout version)."""
        key = json.dumps([list(self.cardinalities), self.n_classes, LAYOUT_VERSION])
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")

    def index(self, feature, value, klass) -> int:
        return int(self.offsets[feature] + value * self.n_classes + klass)

    def cond_block(self, vec, feature):
        """View of ``vec`` for one feature, shaped (cardinality, n_classes)."""
        start = self.offsets[feature]
        stop = start + self.cardinalities[feature] * self.n_classes
        return vec[start:stop].reshape(self.cardinalities[feature], self.n_classes)

    def cell_starts(self, X, missing=None):
        """Start index of each (instance, feature) value block.

        Missing cells point at ``self.size``, one past the end, so callers can
        pad parameter vectors with ``n_classes`` zeros and gather blindly.
        """
        X = np.asarray(X, dtype=np.int64)
        starts = self.offsets[None, :] + X * self.n_classes
        if missing is not None:
            starts = np.where(missing, self.size, starts)
        return starts


@dataclass(eq=False)
class CountTable:
    """Integer tallies in the flat layout; ``total`` is the row count."""

    layout: Layout
    counts: np.ndarray
    total: int

    @property
    def class_counts(self):
        return self.counts[: self.layout.n_classes]

    def cond_counts(self, feature):
        return self.layout.cond_block(self.counts, feature)

    def __add__(self, other):
        return pool_counts([self, other])

    def __eq__(self, other):
        return (
            isinstance(other, CountTable)
            and self.layout == other.layout
            and self.total == other.total
            and np.array_equal(self.counts, other.counts)
        )


@dataclass(eq=False)
class ParamTable:
    """Log class priors and log conditionals in the flat layout."""

    layout: Layout
    log_theta: np.ndarray
    alpha: float

    @property
    def log_prior(self):
        return self.log_theta[: self.layout.n_classes]

    def log_cond(self, feature):
        return self.layout.cond_block(self.log_theta, feature)

    def to_dict(self):
        # JSON has no -inf; zero-probability entries are written as null.
        flat = [None if np.isneginf(v) else float(v) for v in self.log_theta]
        return {
            "schema_hash": f"{self.layout.schema_hash():016x}",
            "layout_version": LAYOUT_VERSION,
            "cardinalities": list(self.layout.cardinalities),
            "n_classes": self.layout.n_classes,
            "alpha": self.alpha,
            "log_theta": flat,
        }

    @classmethod
    def from_dict(cls, doc):
        layout = Layout(doc["cardinalities"], doc["n_classes"])
        if doc["schema_hash"] != f"{layout.schema_hash():016x}":
            raise SchemaError("schema hash does not match cardinalities")
        theta = np.array(
            [-np.inf if v is None else v for v in doc["log_theta"]], dtype=float
        )
        if theta.shape != (layout.size,):
            raise SchemaError("log_theta has the wrong length")
        return cls(layout, theta, float(doc["alpha"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_counts(data, rows=None) -> CountTable:
    """Tally class and (feature value, class) counts over ``rows``.

    Missing cells are left out of the tally of their own feature only.
    """
    layout = Layout.from_schema(data.schema)
    X, y, missing = data.X, data.y, data.missing
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        X, y, missing = X[rows], y[rows], missing[rows]
    if len(y) == 0:
        raise FitError("cannot count an empty row set")
    idx = layout.cell_starts(X) + y[:, None]
    idx = idx[~missing]
    counts = np.bincount(idx, minlength=layout.size).astype(np.int64)
    counts[: layout.n_classes] = np.bincount(y, minlength=layout.n_classes)
    return CountTable(layout, counts, int(len(y)))


def normalize(counts: CountTable, alpha: float = 1.0) -> ParamTable:
    """Turn counts into log-probabilities with pseudo-count ``alpha``.

    ``theta_k = (#k + a) / (m + a*o)`` and
    ``theta_{l|k} = (#(l,k) + a) / (#k + a*|X_j|)``, where ``#k`` is taken
    over the rows observed at feature j (it equals the class count unless
    the feature has masked cells). With ``alpha=0`` zero counts become
    ``-inf``; a class with no observed rows at a feature gets a uniform
    conditional so that every conditional row remains a distribution.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if counts.total <= 0:
        raise FitError("cannot normalise an empty count table")
    layout = counts.layout
    o = layout.n_classes
    c = counts.counts.astype(float)
    out = np.empty(layout.size)
    with np.errstate(divide="ignore"):
        out[:o] = np.log(c[:o] + alpha) - np.log(counts.total + alpha * o)
        for j, card in enumerate(layout.cardinalities):
            block = layout.cond_block(c, j)
            denom = block.sum(axis=0) + alpha * card
            logs = np.log(block + alpha) - np.log(np.where(denom > 0, denom, 1.0))
            logs[:, denom == 0] = -np.log(card)
            layout.cond_block(out, j)[...] = logs
    return ParamTable(layout, out, float(alpha))


def _as_batch(X, missing):
    X = np.asarray(X, dtype=np.int64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
        if missing is not None:
            missing = np.asarray(missing, dtype=bool)[None, :]
    return X, missing, single


def gather_scores(layout, flat, X, missing=None):
    """Sum ``flat`` over each instance's prior and value cells -> (m, o)."""
    o = layout.n_classes
    padded = np.concatenate([flat, np.zeros(o)])
    starts = layout.cell_starts(X, missing)
    per_cell = padded[starts[:, :, None] + np.arange(o)]
    return flat[:o] + per_cell.sum(axis=1)


def log_joint(params: ParamTable, X, missing=None):
    """``log theta_k + sum_j log theta_{x_j|k}`` for every class.

    Accepts one instance (1-D) or a batch (2-D). Masked cells are skipped.
    """
    X, missing, single = _as_batch(X, missing)
    scores = gather_scores(params.layout, params.log_theta, X, missing)
    return scores[0] if single else scores


def argmax_with_fallback(scores, fallback):
    """Row-wise argmax (ties -> lowest index); all ``-inf`` rows use ``fallback``."""
    scores = np.atleast_2d(scores)
    pred = np.argmax(scores, axis=1)
    dead = np.isneginf(scores).all(axis=1)
    if dead.any():
        pred[dead] = int(np.argmax(fallback))
    return pred


def predict(params: ParamTable, X, missing=None):
    """MAP class index; rows whose joint is ``-inf`` everywhere fall back to the prior."""
    X, missing, single = _as_batch(X, missing)
    pred = argmax_with_fallback(log_joint(params, X, missing), params.log_prior)
    return int(pred[0]) if single else pred


def pool_counts(tables) -> CountTable:
    """Elementwise sum of count tables sharing one layout."""
    tables = list(tables)
    if not tables:
        raise PoolError("nothing to pool")
    layout = tables[0].layout
    for t in tables[1:]:
        if t.layout != layout:
            raise PoolError(f"layout mismatch: {t.layout} vs {layout}")
    counts = np.sum([t.counts for t in tables], axis=0).astype(np.int64)
    return CountTable(layout, counts, int(sum(t.total for t in tables)))
