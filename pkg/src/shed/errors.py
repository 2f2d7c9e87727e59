"""Exception hierarchy shared by all shed modules."""

from __future__ import annotations


class ShedError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------------------
# dataset store

class MagicMismatch(ShedError):
    """Embedding file does not start with the expected magic bytes."""


class DimensionMismatch(ShedError):
    """Declared matrix shape disagrees with the file's payload length."""


class RecordCountMismatch(ShedError):
    """Records file line count differs from the embedding row count."""


class NonFiniteEmbedding(ShedError):
    """Embedding matrix contains NaN or infinite entries."""


class DuplicateId(ShedError):
    """Two records share the same instance id."""


class MalformedRecord(ShedError):
    """A records-file line is not a valid record object."""


class UnknownId(ShedError):
    """A referenced instance id does not exist in the dataset."""


class IoFailure(ShedError):
    """Reading or writing an artifact file failed."""


# ---------------------------------------------------------------------------
# clustering

class TooManyClusters(ShedError):
    """Requested more clusters than there are instances."""


# ---------------------------------------------------------------------------
# valuation

class CommandFailed(ShedError):
    """External value-function command exited nonzero or could not run."""


class MalformedScore(ShedError):
    """Value function produced output that is not a single finite real."""


class Timeout(ShedError):
    """External value-function command exceeded its time limit."""


class TooLargeForExact(ShedError):
    """Exact Shapley enumeration refused: too many players."""


class InvalidGroupSize(ShedError):
    """Group size is outside [1, number of proxies]."""


class MissingGroupLabel(ShedError):
    """Demographic-parity oracle applied to instances without group/label data."""


# ---------------------------------------------------------------------------
# sampling

class EmptyActiveSet(ShedError):
    """Softmax probabilities requested over an empty cluster set."""


class TargetTooLarge(ShedError):
    """Requested selection size exceeds the dataset size."""


# ---------------------------------------------------------------------------
# planner

class InfeasibleBudget(ShedError):
    """No integer (k, C) pair satisfies the time-budget constraint."""


class InvalidParams(ShedError):
    """Cost-model parameters are out of range."""


# ---------------------------------------------------------------------------
# pipeline / CLI

class ConfigError(ShedError):
    """Run configuration is invalid or incomplete."""


class StageError(ShedError):
    """A pipeline stage failed; carries the stage name and original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
