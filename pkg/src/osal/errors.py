"""Exception types shared across the package."""


class OsalError(Exception):
    """Base class for all package errors."""


class FormatError(OsalError):
    """A dataset file is malformed (bad magic, truncated body, bad header)."""


class LabelRangeError(OsalError):
    """A label lies outside {0..C-1} for its dataset."""


class BudgetError(OsalError):
    """A requested budget cannot be satisfied by the available pool."""


class ShapeError(OsalError):
    """An array has the wrong shape or dimension."""


class PoolMembershipError(OsalError):
    """An id is not in the pool partition the operation requires."""


class NumericsError(OsalError):
    """A numeric computation produced non-finite values."""


class EmptyBatchError(OsalError):
    """A batch or evaluation set is empty."""


class EmptyPoolError(OsalError):
    """The unlabeled pool is empty."""


class VariantError(OsalError):
    """An operation was called on the wrong model variant."""


class DegenerateStatsError(OsalError):
    """Statistics cannot be fitted (too few or constant values)."""


class FitError(OsalError):
    """An iterative fit failed to converge."""


class ContractError(OsalError):
    """An operation was invoked outside its contract."""


class AggregationError(OsalError):
    """Run results cannot be aggregated together."""


class ConfigError(OsalError):
    """An experiment configuration is invalid."""
