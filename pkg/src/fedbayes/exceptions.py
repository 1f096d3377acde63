"""Exception hierarchy shared by every module of the package."""


class FedBayesError(Exception):
    """Base class for all errors raised by fedbayes."""


class ParseError(FedBayesError):
    """A dataset file could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SchemaError(FedBayesError):
    """The data does not describe a valid discrete classification problem."""


class PartitionError(FedBayesError):
    """Instances cannot be split among the requested number of clients."""


class FoldError(FedBayesError):
    """A shard is too small for the requested number of CV folds."""


class FitError(FedBayesError):
    """Counting or normalisation was attempted on an empty row set."""


class PoolError(FedBayesError):
    """Count tables with different layouts were combined."""


class EvaluationError(FedBayesError):
    """A nonzero weight multiplies a zero-probability parameter."""


class OptimizerError(FedBayesError):
    """The objective returned a non-finite value or gradient."""


class AggregationError(FedBayesError):
    """Weight messages for one round are incomplete or inconsistent."""


class MessageError(FedBayesError):
    """A serialised weight message is malformed."""
