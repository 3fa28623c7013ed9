"""Exception hierarchy shared by every module."""


class DataReuseError(Exception):
    """Base class for all package errors."""


class DomainError(DataReuseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CapacityError(DomainError):
    """A requested allocation does not fit in the available data."""
