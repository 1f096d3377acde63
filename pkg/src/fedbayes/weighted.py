"""Weighted naive Bayes: per-parameter exponents learned discriminatively.

A weight vector is a flat float array in the same layout as the parameter
table (see :class:`fedbayes.generative.Layout`), one weight per log
probability. Scores are

    s_k(x) = w_k * log theta_k + sum_j w_{k,j,x_j} * log theta_{k,j,x_j}

and the class posterior is ``softmax(s)``. With all weights equal to one the
model is ordinary naive Bayes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import EvaluationError, FitError
from .generative import ParamTable, _as_batch, argmax_with_fallback

__all__ = [
    "CllEvaluation",
    "CllObjective",
    "weighted_scores",
    "log_posterior",
    "cll",
    "predict_weighted",
    "ones_weights",
]


def ones_weights(params: ParamTable) -> np.ndarray:
    return np.ones(params.layout.size)


def _check_weights(params, weights):
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (params.layout.size,):
        raise ValueError(
            f"weight vector has shape {weights.shape}, expected ({params.layout.size},)"
        )
    if not np.isfinite(weights).all():
        raise EvaluationError("weight vector contains non-finite entries")
    return weights


def _weighted_log_theta(params, weights):
    # 0 * -inf is defined as 0: a zeroed weight switches the cell off.
    with np.errstate(invalid="ignore"):
        v = weights * params.log_theta
    v[weights == 0] = 0.0
    return v


def _raise_bad_cell(params, flat_index):
    layout = params.layout
    o = layout.n_classes
    if flat_index < o:
        raise EvaluationError(f"nonzero weight on zero-probability class prior {flat_index}")
    j = int(np.searchsorted(layout.offsets, flat_index, side="right") - 1)
    rel = flat_index - layout.offsets[j]
    raise EvaluationError(
        f"nonzero weight on zero-probability cell (feature {j}, value {rel // o}, "
        f"class {rel % o}); fit with alpha > 0"
    )


class _Design:
    """Sparse incidence matrix of a fixed batch of instances.

    Row ``i * o + k`` has a one at the prior cell of class k and at the cell
    ``(j, x_ij, k)`` of every observed feature j, so that ``A @ v`` yields the
    scores of every (instance, class) pair and ``A.T @ r`` accumulates
    per-pair residuals back onto the cells.
    """

    def __init__(self, params, X, missing=None):
        layout = params.layout
        self.layout = layout
        o = layout.n_classes
        starts = layout.cell_starts(X, missing)
        self.m, self.n = starts.shape
        cells = starts[:, None, :] + np.arange(o)[None, :, None]
        cols = np.concatenate(
            [np.broadcast_to(np.arange(o)[None, :, None], (self.m, o, 1)), cells], axis=2
        )
        keep = cols < layout.size
        row_ids = np.broadcast_to(np.arange(self.m * o).reshape(self.m, o, 1), cols.shape)
        self.A = sp.csr_matrix(
            (np.ones(int(keep.sum())), (row_ids[keep], cols[keep])),
            shape=(self.m * o, layout.size),
        )
        self.AT = self.A.T.tocsr()

    def scores(self, params, v):
        s = (self.A @ v).reshape(self.m, self.layout.n_classes)
        if not np.isfinite(s).all():
            bad = np.flatnonzero(~np.isfinite(v))
            touched = bad[np.diff(self.AT.indptr)[bad] > 0]
            _raise_bad_cell(params, int(touched[0]))
        return s

    def accumulate(self, resid):
        """Sum ``resid[i, k]`` into every cell touched by instance i, class k."""
        return self.AT @ resid.ravel()


def _log_softmax(s):
    mx = s.max(axis=1, keepdims=True)
    shifted = s - mx
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def weighted_scores(params: ParamTable, weights, X, missing=None):
    """Unnormalised weighted log scores, shape (o,) or (m, o)."""
    weights = _check_weights(params, weights)
    X, missing, single = _as_batch(X, missing)
    s = _Design(params, X, missing).scores(params, _weighted_log_theta(params, weights))
    return s[0] if single else s


def log_posterior(params: ParamTable, weights, X, missing=None):
    """``s - logsumexp(s)``, computed with a max shift."""
    X, missing, single = _as_batch(X, missing)
    lp = _log_softmax(weighted_scores(params, weights, X, missing))
    return lp[0] if single else lp


def predict_weighted(params: ParamTable, weights, X, missing=None):
    """Most probable class under the weighted posterior; ties -> lowest index."""
    X, missing, single = _as_batch(X, missing)
    s = weighted_scores(params, weights, X, missing)
    pred = argmax_with_fallback(s, params.log_prior)
    return int(pred[0]) if single else pred


@dataclass
class CllEvaluation:
    value: float
    gradient: np.ndarray


class CllObjective:
    """Negative CLL as a function of the weights, for a fixed table and batch.

    Calling the object returns ``(-CLL(w), -dCLL/dw)``, the form expected by
    :func:`fedbayes.optimize.minimize`. Index arrays are built once.
    """

    def __init__(self, params: ParamTable, X, y, missing=None):
        X, missing, _ = _as_batch(X, missing)
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise FitError("CLL needs at least one instance")
        self.params = params
        self.design = _Design(params, X, missing)
        self.y = y
        self._onehot = np.zeros((len(y), params.layout.n_classes))
        self._onehot[np.arange(len(y)), y] = 1.0
        self._rows = np.arange(len(y))
        self.n_evals = 0

    def evaluate(self, weights) -> CllEvaluation:
        params = self.params
        weights = _check_weights(params, weights)
        s = self.design.scores(params, _weighted_log_theta(params, weights))
        lp = _log_softmax(s)
        value = float(lp[self._rows, self.y].sum())
        resid = self._onehot - np.exp(lp)
        acc = self.design.accumulate(resid)
        with np.errstate(invalid="ignore"):
            grad = acc * params.log_theta
        grad[acc == 0] = 0.0
        self.n_evals += 1
        return CllEvaluation(value, grad)

    def predict(self, weights):
        """Predicted class of every instance in the batch."""
        params = self.params
        weights = _check_weights(params, weights)
        s = self.design.scores(params, _weighted_log_theta(params, weights))
        return argmax_with_fallback(s, params.log_prior)

    def accuracy(self, weights) -> float:
        return float(np.mean(self.predict(weights) == self.y))

    def __call__(self, weights):
        ev = self.evaluate(weights)
        return -ev.value, -ev.gradient


def cll(params: ParamTable, weights, X, y, missing=None) -> CllEvaluation:
    """Conditional log-likelihood of ``y`` given ``X`` and its gradient in ``w``.

    ``dCLL/dw_k = sum_i (1[y_i=k] - P(k|x_i)) log theta_k`` and
    ``dCLL/dw_{k,j,l} = sum_i 1[x_ij=l] (1[y_i=k] - P(k|x_i)) log theta_{k,j,l}``.
    """
    return CllObjective(params, X, y, missing).evaluate(weights)
