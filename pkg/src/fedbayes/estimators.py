"""scikit-learn style estimators over categorical feature matrices.

Inputs may hold any hashable category labels (strings, integers). Each
column's categories are learned at fit time; a category unseen at fit time
is treated as a missing cell at prediction time and skipped in the sum of
log-probabilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import OrdinalEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import DiscreteDataset, Schema
from .federation import ClientState, personalize, run_federation
from .generative import fit_counts, log_joint, normalize, predict
from .optimize import UNLIMITED_ITERATIONS, OptimizerConfig, minimize
from .weighted import CllObjective, log_posterior, predict_weighted

__all__ = ["NaiveBayes", "WeightedNaiveBayes", "FederatedWeightedNaiveBayes"]


def _log_normalize(s):
    mx = s.max(axis=1, keepdims=True)
    return s - mx - np.log(np.exp(s - mx).sum(axis=1, keepdims=True))


class _CategoricalMixin:
    def _encode_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=None)
        self.encoder_ = OrdinalEncoder(
            handle_unknown="use_encoded_value", unknown_value=-1, dtype=np.int64
        )
        codes = self.encoder_.fit_transform(X)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        schema = Schema(
            tuple(f"x{j}" for j in range(X.shape[1])),
            tuple(tuple(str(v) for v in cats) for cats in self.encoder_.categories_),
            tuple(str(c) for c in self.classes_),
        )
        return DiscreteDataset(schema, codes, y_idx)

    def _encode(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=None)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        codes = self.encoder_.transform(X)
        missing = codes < 0
        return np.where(missing, 0, codes), missing


class NaiveBayes(_CategoricalMixin, ClassifierMixin, BaseEstimator):
    """Generative naive Bayes with additive smoothing.

    Parameters
    ----------
    alpha : float, default=1.0
        Pseudo-count added to every cell.

    Attributes
    ----------
    params_ : ParamTable
    classes_ : ndarray
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        data = self._encode_fit(X, y)
        self.params_ = normalize(fit_counts(data), self.alpha)
        return self

    def predict_log_proba(self, X):
        codes, missing = self._encode(X)
        return _log_normalize(log_joint(self.params_, codes, missing))

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        codes, missing = self._encode(X)
        return self.classes_[predict(self.params_, codes, missing)]


class WeightedNaiveBayes(_CategoricalMixin, ClassifierMixin, BaseEstimator):
    """Naive Bayes with one exponent per log-probability, fit to maximise CLL.

    Parameters
    ----------
    alpha : float, default=1.0
    max_iter : int, default=UNLIMITED_ITERATIONS
        L-BFGS iteration cap.
    memory : int, default=10
    tol : float, default=1e-5
        Max-norm gradient tolerance.
    init : {"ones", "random"}, default="ones"
        ``"random"`` draws uniform weights on [0.5, 1.5].
    random_state : int, default=0

    Attributes
    ----------
    params_ : ParamTable
    weights_ : ndarray
    report_ : OptimizeReport
    """

    def __init__(self, alpha=1.0, max_iter=UNLIMITED_ITERATIONS, memory=10, tol=1e-5, init="ones", random_state=0):
        self.alpha = alpha
        self.max_iter = max_iter
        self.memory = memory
        self.tol = tol
        self.init = init
        self.random_state = random_state

    def fit(self, X, y):
        data = self._encode_fit(X, y)
        self.params_ = normalize(fit_counts(data), self.alpha)
        objective = CllObjective(self.params_, data.X, data.y, data.missing)
        dim = self.params_.layout.size
        if self.init == "ones":
            start = np.ones(dim)
        elif self.init == "random":
            start = np.random.default_rng(self.random_state).uniform(0.5, 1.5, dim)
        else:
            raise ValueError(f"unknown init {self.init!r}")
        opt = OptimizerConfig(max_iterations=self.max_iter, memory=self.memory, grad_tolerance=self.tol)
        self.report_ = minimize(objective, start, opt)
        self.weights_ = self.report_.final_point
        return self

    def predict_log_proba(self, X):
        codes, missing = self._encode(X)
        return log_posterior(self.params_, self.weights_, codes, missing)

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        codes, missing = self._encode(X)
        return self.classes_[predict_weighted(self.params_, self.weights_, codes, missing)]


class FederatedWeightedNaiveBayes(_CategoricalMixin, ClassifierMixin, BaseEstimator):
    """Weighted naive Bayes trained by simulated federated averaging.

    ``groups`` assigns every row to a client. Each client keeps its own
    probability table; only weight vectors are exchanged. Prediction needs
    the client of each row, because the client's own table is used.

    Parameters
    ----------
    alpha : float, default=1.0
    n_rounds : int, default=50
    max_iter : int, default=5
        Local L-BFGS iteration cap per round.
    memory, tol
        Local optimiser settings.
    aggregation : {"uniform", "weighted"}, default="uniform"
    personalize : bool, default=False
        Predict with one extra local optimisation from the final global
        weights instead of the global weights themselves.
    message_format : {"binary", "json"}, default="binary"
    random_state : int, default=0
        Seeds the initial global weights.
    n_jobs : int, default=1

    Attributes
    ----------
    global_weights_ : ndarray
    clients_ : dict of client id -> ClientState
    personal_weights_ : dict of client id -> ndarray
    history_ : list of RoundRecord
    """

    def __init__(
        self, alpha=1.0, n_rounds=50, max_iter=5, memory=10, tol=1e-5, aggregation="uniform",
        personalize=False, message_format="binary", random_state=0, n_jobs=1,
    ):
        self.alpha = alpha
        self.n_rounds = n_rounds
        self.max_iter = max_iter
        self.memory = memory
        self.tol = tol
        self.aggregation = aggregation
        self.personalize = personalize
        self.message_format = message_format
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, groups=None):
        data = self._encode_fit(X, y)
        groups = np.zeros(data.n_samples, dtype=np.int64) if groups is None else np.asarray(groups)
        if groups.shape != (data.n_samples,):
            raise ValueError("groups must give one client id per row")
        self.client_ids_ = np.unique(groups)
        clients = [
            ClientState.fit(int(i), data, np.flatnonzero(groups == cid), (), self.alpha)
            for i, cid in enumerate(self.client_ids_)
        ]
        opt = OptimizerConfig(max_iterations=self.max_iter, memory=self.memory, grad_tolerance=self.tol)
        result = run_federation(
            clients, self.n_rounds, opt, self.random_state, aggregation=self.aggregation,
            message_format=self.message_format, evaluate=False, n_jobs=self.n_jobs,
        )
        self.global_weights_ = result.global_weights
        self.history_ = result.records
        self.clients_ = dict(zip(self.client_ids_.tolist(), clients))
        self.personal_weights_ = {}
        if self.personalize:
            for cid, client in self.clients_.items():
                self.personal_weights_[cid] = personalize(client, self.global_weights_, opt)
        return self

    def _groups(self, n, groups):
        if groups is None:
            if len(self.client_ids_) != 1:
                raise ValueError("groups is required when more than one client was fitted")
            return np.full(n, self.client_ids_[0])
        groups = np.asarray(groups)
        unknown = set(np.unique(groups).tolist()) - set(self.clients_)
        if unknown:
            raise ValueError(f"unknown clients {sorted(unknown)}")
        return groups

    def _per_client(self, X, groups, fn):
        codes, missing = self._encode(X)
        groups = self._groups(len(codes), groups)
        out = None
        for cid in np.unique(groups):
            rows = np.flatnonzero(groups == cid)
            client = self.clients_[cid.item()]
            w = self.personal_weights_.get(cid.item(), self.global_weights_)
            part = fn(client.params, w, codes[rows], missing[rows])
            if out is None:
                out = np.empty((len(codes),) + part.shape[1:], dtype=part.dtype)
            out[rows] = part
        return out

    def predict_log_proba(self, X, groups=None):
        return self._per_client(X, groups, log_posterior)

    def predict_proba(self, X, groups=None):
        return np.exp(self.predict_log_proba(X, groups))

    def predict(self, X, groups=None):
        idx = self._per_client(X, groups, predict_weighted)
        return self.classes_[idx]

    def score(self, X, y, groups=None):
        return float(np.mean(self.predict(X, groups) == np.asarray(y)))
