"""Error propagation, capacity and subsampling tools for reused datasets."""

from .errors import CapacityError, DataReuseError, DomainError

__version__ = "0.1.0"

__all__ = ["CapacityError", "DataReuseError", "DomainError", "__version__"]
