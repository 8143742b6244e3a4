"""Placement-only simulator of the PRF hierarchy for stash-demand sweeps.

It tracks which indices each logical level holds and which of them sit
in the shared stash, and rebuilds each destination table with the same
seeds, insertion order and eviction walk as :class:`HierarchicalOram`.
Values and ciphertexts are not modelled, so it runs fast enough for
thousands of trials. The test suite checks its per-flush stash demand
against the full protocol.
"""

import numpy as np

from . import _kernels
from .crypto import SeedChain
from .hierarchy import flushes_due, prf_geometry
from .stats import StashStats

_EMPTY = np.empty(0, dtype=np.int64)


class StashSimulator:
    def __init__(self, params):
        self.params = params
        self.geometry = g = prf_geometry(params)
        self.stash_stats = StashStats(capacity=g.stash_capacity)
        self.t = 0
        self.chain = SeedChain.start(params.master_seed)
        for _ in range(g.levels):
            self.chain, _ = self.chain.take(2)
        self.levels = [_EMPTY] * (g.levels + 1)
        self.dropped = [set() for _ in range(g.levels + 1)]
        self.where = np.full(params.n, g.levels, dtype=np.int8)
        self.stash = {}  # index -> tag
        self.q = []
        self._place(g.levels, np.arange(params.n, dtype=np.int64), kept={})

    @property
    def stash_demand(self):
        return len(self.stash)

    def _place(self, level, keys, kept):
        """Build ``level`` from sorted ``keys``; returns the spilled indices."""
        g = self.geometry
        self.chain, (s0, s1) = self.chain.take(2)
        m = g.cells[level]
        loc0 = _kernels.batch_locations(keys, s0, m)
        loc1 = _kernels.batch_locations(keys, s1, m)
        _, _, spilled = _kernels.place(loc0, loc1, m, g.move_limit)
        self.levels[level] = keys
        self.dropped[level] = set()
        for x in keys[spilled].tolist():
            tag = kept.get(x)
            if tag is None or tag > level:
                # a deeper stash copy is stale
                if tag is not None:
                    self.dropped[tag].add(x)
                kept[x] = level
            else:
                self.dropped[level].add(x)
        self.stash = kept
        self.stash_stats.record(len(kept))
        return spilled

    def _flush(self, src, dst):
        if src == 0:
            src_keys = np.unique(np.array(self.q, dtype=np.int64))
            self.where[src_keys] = dst
            self.q = []
        else:
            src_keys = self.levels[src]
            hit = src_keys[self.where[src_keys] == src]
            self.where[hit] = dst
        keys = np.union1d(src_keys, self.levels[dst])
        drops = self.dropped[src] | self.dropped[dst]
        if drops:
            keys = keys[~np.isin(keys, np.fromiter(drops, dtype=np.int64))]
        kept = {x: tag for x, tag in self.stash.items() if tag != src and tag != dst}
        self._place(dst, keys, kept)
        if src > 0:
            self.levels[src] = _EMPTY
            self.dropped[src] = set()
            self.chain, _ = self.chain.take(2)

    def access(self, x):
        level = self.where[x]
        if level and self.stash.get(x) == level:
            del self.stash[x]
            self.dropped[level].add(x)
        self.where[x] = 0
        self.q.append(x)
        self.t += 1
        if self.t % self.geometry.q_period == 0:
            for src, dst in flushes_due(self.t, self.geometry):
                self._flush(src, dst)

    def run(self, xs):
        """Feed a sequence of indices; returns the run's maximum stash demand."""
        access = self.access
        for x in np.asarray(xs, dtype=np.int64).tolist():
            access(x)
        return self.stash_stats.run_max
