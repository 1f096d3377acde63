"""Federated weighted naive Bayes for categorical data."""

from .dataset import (
    ClientPartition,
    DiscreteDataset,
    FoldSplit,
    Schema,
    derive_rng,
    dump_splits,
    load_dataset,
    make_folds,
    partition_clients,
)
from .estimators import FederatedWeightedNaiveBayes, NaiveBayes, WeightedNaiveBayes
from .exceptions import (
    AggregationError,
    EvaluationError,
    FedBayesError,
    FitError,
    FoldError,
    MessageError,
    OptimizerError,
    ParseError,
    PartitionError,
    PoolError,
    SchemaError,
)
from .federation import (
    ClientState,
    WeightMessage,
    aggregate,
    init_global_weights,
    local_round,
    personalize,
    run_federation,
)
from .generative import CountTable, Layout, ParamTable, fit_counts, log_joint, normalize, pool_counts, predict
from .optimize import UNLIMITED_ITERATIONS, OptimizerConfig, OptimizeReport, Termination, minimize
from .weighted import CllObjective, cll, log_posterior, predict_weighted, weighted_scores

__version__ = "0.1.0"

__all__ = [
    "aggregate",
    "AggregationError",
    "ClientPartition",
    "ClientState",
    "cll",
    "CllObjective",
    "CountTable",
    "derive_rng",
    "DiscreteDataset",
    "dump_splits",
    "EvaluationError",
    "FedBayesError",
    "FederatedWeightedNaiveBayes",
    "fit_counts",
    "FitError",
    "FoldError",
    "FoldSplit",
    "init_global_weights",
    "Layout",
    "load_dataset",
    "local_round",
    "log_joint",
    "log_posterior",
    "make_folds",
    "MessageError",
    "minimize",
    "NaiveBayes",
    "normalize",
    "OptimizerConfig",
    "OptimizeReport",
    "OptimizerError",
    "ParamTable",
    "ParseError",
    "partition_clients",
    "PartitionError",
    "personalize",
    "pool_counts",
    "PoolError",
    "predict",
    "predict_weighted",
    "run_federation",
    "Schema",
    "SchemaError",
    "Termination",
    "UNLIMITED_ITERATIONS",
    "weighted_scores",
    "WeightedNaiveBayes",
    "WeightMessage",
]
