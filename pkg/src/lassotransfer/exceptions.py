"""Error and warning types shared across the package."""


class LassoTransferError(Exception):
    """Base class for all package errors."""


class NoPenalizableFeatures(LassoTransferError):
    """Every feature is excluded (infinite factor, or constant column), or all
    factors are zero so no entry value for the path exists."""


class InvalidFamily(LassoTransferError):
    """Family is unknown, or incompatible with the response / operation."""


class InvalidFolds(LassoTransferError):
    """Fold count outside 2..n, or a fold plan inconsistent with the data."""


class FoldDegenerate(LassoTransferError):
    """A fold split leaves a training complement without both classes."""


class UndefinedMetric(LassoTransferError):
    """Requested CV metric is not defined for the family."""


class GroupTooSmall(LassoTransferError):
    """A group has too few observations to fit and cross-validate."""


class ClassTooSmall(LassoTransferError):
    """A response class has too few observations for its one-vs-rest stage."""


class ColumnDegenerate(LassoTransferError):
    """A response column is constant where a non-degenerate one is required."""


class UnknownGroup(LassoTransferError):
    """Prediction requested for a group label absent at training time."""


class InvalidGrouping(LassoTransferError):
    """Group labels are malformed (not 1..G with every label occupied)."""


class InvalidTreatment(LassoTransferError):
    """Treatment indicator is not binary 0/1 with both arms present."""


class SingularSupport(LassoTransferError):
    """X_S^T X_S is numerically singular for a theory computation."""


class InvalidSpec(LassoTransferError):
    """A simulation or experiment spec fails validation."""


class DegenerateTransfer(UserWarning):
    """Transfer recipe excludes every feature (empty first-stage support with
    alpha = 0); the second stage proceeds intercept-only."""


class DegenerateSplit(UserWarning):
    """No admissible split improves impurity; the tree is a single leaf."""
