"""Exception types shared across the package."""


class ProxitrError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(ProxitrError, ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class DegenerateDataError(ProxitrError, ValueError):
    """Data cannot support the requested computation (identical rows,
    an absent treatment arm, a single-class label vector, an empty fold)."""


class ContractViolationError(ProxitrError, ValueError):
    """An object is used outside its declared interface, e.g. a policy
    reading covariate blocks an estimator does not identify."""


class NumericOverflowError(ProxitrError, ArithmeticError):
    """A numeric evaluation produced non-finite values."""
