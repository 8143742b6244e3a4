"""Data-oblivious batch primitives over server regions.

Every function here produces a server trace that depends only on the
region size and the workspace capacity, never on the records.
"""

import contextlib
import functools
import math

import numpy as np

from .errors import UsageError


class PrivateWorkspace:
    """Client scratch memory of ``ceil(n ** nu)`` cells, usable within one episode."""

    def __init__(self, capacity_cells):
        if capacity_cells < 2:
            raise UsageError("workspace must hold at least two cells")
        self.capacity = int(capacity_cells)
        self.current_use = 0
        self.peak = 0

    @classmethod
    def for_ram(cls, n, nu):
        if nu <= 0:
            raise UsageError("nu must be positive")
        return cls(max(2, math.ceil(n ** nu - 1e-9)))

    @contextlib.contextmanager
    def hold(self, cells):
        if self.current_use + cells > self.capacity:
            raise AssertionError(
                f"workspace overrun: {self.current_use} + {cells} > {self.capacity}")
        self.current_use += cells
        self.peak = max(self.peak, self.current_use)
        try:
            yield
        finally:
            self.current_use -= cells

    def fits(self, cells):
        return self.current_use + cells <= self.capacity


@functools.lru_cache(maxsize=8)
def merge_network(n):
    """Comparator list of Batcher's odd-even merge sort on ``n`` wires.

    Comparators touching wires >= n are dropped, which is equivalent to
    padding the input with maximal keys up to the next power of two.
    """
    pairs = []
    p = 1
    while p < n:
        k = p
        while k >= 1:
            j = k % p
            while j + k < n:
                for i in range(min(k, n - j - k)):
                    if (i + j) // (2 * p) == (i + j + k) // (2 * p):
                        pairs.append((i + j, i + j + k))
                j += 2 * k
            k //= 2
        p *= 2
    return tuple(pairs)


@functools.lru_cache(maxsize=None)
def network_size(n):
    """``len(merge_network(n))`` without building the list."""
    total = 0
    p = 1
    while p < n:
        k = p
        while k >= 1:
            js = np.arange(k % p, max(n - k, 0), 2 * k)
            if js.size:
                i = np.arange(k)
                lo = js[:, None] + i[None, :]
                ok = (i[None, :] < (n - js - k)[:, None]) & (lo // (2 * p) == (lo + k) // (2 * p))
                total += int(ok.sum())
            k //= 2
        p *= 2
    return total


def rebuild_key(entry):
    """Live before empty, then index ascending, then freshest first."""
    item = entry.item
    return (not item.live, item.x, -item.epoch)


def oblivious_sort(vault, region, key, workspace):
    """Sort ``region`` by ``key`` (a function of the decoded record).

    Regions that fit the workspace are read, sorted privately and written
    back. Larger ones run the merge network one compare-exchange at a
    time: read i, read j, write i, write j. Returns the sorted records
    when the private path was taken, else None.
    """
    n = region.cell_count
    if workspace.fits(n):
        with workspace.hold(n):
            entries = vault.read_all(region)
            entries.sort(key=key)
            vault.write_all(region, entries)
        return entries
    with workspace.hold(2):
        for i, j in merge_network(n):
            a = vault.read(region, i)
            b = vault.read(region, j)
            if key(b) < key(a):
                a, b = b, a
            vault.write(region, i, a)
            vault.write(region, j, b)
    return None


def dedup_by_epoch(vault, region, workspace):
    """Keep only the first (freshest) live copy of each index.

    Expects duplicates adjacent with the highest epoch first, as produced
    by sorting with :func:`rebuild_key`. One read and one write per cell.
    Returns the number of live records left.
    """
    live = 0
    prev = None
    with workspace.hold(1):
        for i in range(region.cell_count):
            entry = vault.read(region, i)
            item = entry.item
            if item.live:
                if prev == item.x:
                    item.live = False
                else:
                    prev = item.x
                    live += 1
            vault.write(region, i, entry)
    return live


def compact_live(vault, region, workspace):
    """Move live records to a prefix ordered by index; returns the live count.

    The network path needs one extra counting pass over the region.
    """
    entries = oblivious_sort(vault, region, rebuild_key, workspace)
    if entries is not None:
        return sum(1 for e in entries if e.item.live)
    live = 0
    with workspace.hold(1):
        for i in range(region.cell_count):
            if vault.read(region, i).item.live:
                live += 1
    return live
