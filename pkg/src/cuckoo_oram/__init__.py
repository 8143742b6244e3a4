"""Stateless oblivious RAM built from cuckoo-hashed levels sharing one stash."""

from .errors import (BuildFailure, FitError, InitializationError, IntegrityError, NotEnoughData,
                     StashOverflowError, UsageError)
from .hierarchy import AccessOp, HierarchicalOram, Mode, OramParams
from .server import Server
from .tree import TreeOram

__all__ = [
    "AccessOp", "BuildFailure", "FitError", "HierarchicalOram", "InitializationError",
    "IntegrityError", "Mode", "NotEnoughData", "OramParams", "Server", "StashOverflowError",
    "TreeOram", "UsageError",
]
