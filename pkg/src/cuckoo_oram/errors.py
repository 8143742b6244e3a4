"""Exception types shared across the package."""


class UsageError(ValueError):
    """A caller violated an operation's precondition."""


class IntegrityError(Exception):
    """A cell failed authentication or could not be decoded."""


class BuildFailure(Exception):
    """A cuckoo build spilled more items than the stash has room for."""

    def __init__(self, spilled, room):
        super().__init__(f"build spilled {spilled} items, stash room {room}")
        self.spilled = spilled
        self.room = room


class StashOverflowError(Exception):
    """The shared stash could not absorb a rebuild even after retries."""


class InitializationError(Exception):
    pass


class NotEnoughData(ValueError):
    """Too few samples for the requested statistical test."""


class FitError(ValueError):
    pass
