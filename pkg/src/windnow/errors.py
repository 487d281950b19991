"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, flags, or contract violations at setup time."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(ArithmeticError):
    """Numerical failure: non-finite values, singular systems, divergence."""


class ShapeError(ValueError):
    """Matrix dimension mismatch."""


class DomainError(ValueError):
    """Argument outside an op's mathematical domain."""


class ContractError(RuntimeError):
    """An internal API contract was violated."""
