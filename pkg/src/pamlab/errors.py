"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """A parameter record or config is inconsistent, e.g. an unstable time step."""


class OutOfBoxError(RuntimeError):
    """A walk left the finite lattice box under absorbing boundaries."""


class CapExceededError(RuntimeError):
    """A combinatorial enumeration would exceed its configured cap."""


class NumericalFailure(RuntimeError):
    """A quantity underflowed or otherwise could not be represented."""
