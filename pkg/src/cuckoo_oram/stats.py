"""Stash-demand bookkeeping shared by every ORAM flavour."""

from collections import Counter
from dataclasses import dataclass, field


@dataclass
class StashStats:
    """Per-flush stash demand (dirty entries after each merge)."""

    per_flush: list = field(default_factory=list)
    overflow_count: int = 0
    capacity: int = 0

    def record(self, demand):
        self.per_flush.append(demand)
        if demand > self.capacity:
            self.overflow_count += 1

    @property
    def run_max(self):
        return max(self.per_flush, default=0)

    @property
    def histogram(self):
        return Counter(self.per_flush)
