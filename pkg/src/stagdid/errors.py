"""Exception hierarchy and warning categories shared across the package.

Two error families matter for callers. ``ValidationError`` covers problems
with the input data or configuration (the command line maps these to exit
code 2). ``EstimationError`` covers failures that arise while estimating on
otherwise valid data, such as an empty comparison group (exit code 3).
"""


class StagdidError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StagdidError):
    """Input data or configuration is malformed."""


class EstimationError(StagdidError):
    """Estimation cannot proceed on the given (valid) data."""


# ---------------------------------------------------------------------------
# data loading and validation
# ---------------------------------------------------------------------------

class UnbalancedPanel(ValidationError):
    """A unit is missing one or more sample periods."""


class DuplicateCell(ValidationError):
    """The same unit-period pair appears more than once."""


class InconsistentFirstTreat(ValidationError):
    """A unit reports different first-treatment periods across rows."""


class InvalidShares(ValidationError):
    """Simulation group shares are negative or do not sum to one."""


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

class EmptyComparisonSet(EstimationError):
    """No units satisfy the comparison-set selector for a cell."""


class EmptyTreatedCell(EstimationError):
    """No treated units in the requested group-stratum cell."""


class UnknownGroup(EstimationError):
    """The requested first-treatment group is not realized in the data."""


class NoIdentifiedCells(EstimationError):
    """No group-time cell could be estimated."""


class NoPostCells(EstimationError):
    """A summary over post-treatment cells was requested but none exist."""


class NoCommonE(EstimationError):
    """Two event-study curves share no event time."""


class IneligibleGroup(EstimationError):
    """The group cannot contribute at the requested event time."""


class TooManyMoments(EstimationError):
    """The moment system has more moments than sample units."""


class SingularSigma(EstimationError):
    """The moment covariance matrix is numerically singular."""


class RankDeficientJacobian(EstimationError):
    """The moment Jacobian does not identify all parameters."""


class JustIdentified(EstimationError):
    """An overidentification test was requested on a just-identified model."""


class CollinearDesign(EstimationError):
    """The regression design matrix is collinear after absorption."""


# ---------------------------------------------------------------------------
# warning categories
# ---------------------------------------------------------------------------

class OverlapWarning(UserWarning):
    """A group's weighted share is at or below the overlap threshold."""


class SmallGroupWarning(UserWarning):
    """A group contains a single unit; its variance contribution is zero."""


class OmittedCellWarning(UserWarning):
    """A group-time cell was skipped because its comparison set is empty."""


class DegenerateColumn(UserWarning):
    """A bootstrap column has zero spread and is excluded from the sup-t max.

    Issued as a warning rather than raised: the remaining columns are still
    perfectly usable, and the caller may legitimately carry deterministic
    coordinates (for example a pre-period cell that is identically zero).
    """
