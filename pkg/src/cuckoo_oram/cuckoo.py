"""Two-subtable cuckoo hashing with bounded eviction walks and a stash.

Tables run in one of two addressing modes. In PRF mode an item's cells
are ``prf_location(seed_b, x, m)`` for sides b = 0, 1. In stored-location
mode each item carries its own ``loc_pair``, drawn uniformly at random by
whoever places it.
"""

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .crypto import prf_location, prf_locations
from .errors import BuildFailure, UsageError


class Pointer(NamedTuple):
    """Where a tree node lives: logical level plus its two candidate cells.

    Level 0 is the cache Q; levels 1..L are tables.
    """

    level: int
    i1: int
    i2: int


@dataclass(slots=True)
class Item:
    x: int
    value: int = 0
    epoch: int = 0
    loc_pair: Optional[tuple] = None
    live: bool = True
    children: Optional[tuple] = None

    def copy(self):
        return Item(self.x, self.value, self.epoch, self.loc_pair, self.live, self.children)


def empty_item():
    return Item(0, live=False)


@dataclass(slots=True)
class StashEntry:
    """A stash slot. ``tag`` is the logical level whose rebuild spilled the item."""

    item: Item
    dirty: bool = True
    tag: int = 0


class InsertResult(enum.Enum):
    PLACED = "placed"
    STASHED = "stashed"
    STASH_OVERFLOW = "stash_overflow"


class AddressMode(enum.Enum):
    PRF = "prf"
    STORED_LOCATIONS = "stored"


class Stash:
    """Spill buffer shared by every table; ``capacity=None`` means unbounded."""

    def __init__(self, capacity=None):
        self.capacity = capacity
        self.entries = []

    @property
    def demand(self):
        return sum(1 for e in self.entries if e.dirty)

    def find(self, x):
        for entry in self.entries:
            if entry.dirty and entry.item.x == x:
                return entry
        return None

    def add(self, item, tag=0):
        """Store ``item`` unless a dirty entry for the same index exists.

        Returns False when the stash is full. Clean slots are reused.
        """
        if self.find(item.x) is not None:
            return True
        for entry in self.entries:
            if not entry.dirty:
                entry.item, entry.dirty, entry.tag = item, True, tag
                return True
        if self.capacity is not None and len(self.entries) >= self.capacity:
            return False
        self.entries.append(StashEntry(item, True, tag))
        return True

    def clean(self, x):
        entry = self.find(x)
        if entry is not None:
            entry.dirty = False
        return entry


class CuckooTable:
    """Two subtables of ``cells`` slots each.

    ``seeds=None`` selects stored-location addressing.
    """

    def __init__(self, level, cells, seeds=None, generation=0, capacity=None):
        if cells < 1:
            raise UsageError("a subtable needs at least one cell")
        self.level = level
        self.cells = cells
        self.seeds = seeds
        self.generation = generation
        self.capacity = capacity
        self.slots = [[None] * cells, [None] * cells]
        self._where = {}

    @property
    def mode(self):
        return AddressMode.STORED_LOCATIONS if self.seeds is None else AddressMode.PRF

    @property
    def occupancy(self):
        return len(self._where)

    def items(self):
        for side in (0, 1):
            for item in self.slots[side]:
                if item is not None:
                    yield item

    def _set(self, side, offset, item):
        self.slots[side][offset] = item
        if item is not None:
            self._where[item.x] = (side, offset)


def probe_locations(table, key):
    """The two designated offsets of ``key`` (an index or an :class:`Item`)."""
    if table.mode is AddressMode.STORED_LOCATIONS:
        pair = key.loc_pair if isinstance(key, Item) else key
        if pair is None or isinstance(pair, int):
            raise UsageError("stored-location table needs an item with loc_pair")
        return tuple(pair)
    x = key.x if isinstance(key, Item) else key
    return (prf_location(table.seeds[0], x, table.cells),
            prf_location(table.seeds[1], x, table.cells))


def insert(table, item, stash, move_limit, rng=None):
    """Place ``item`` by the alternating eviction walk.

    The item first goes to its side-0 cell; each displaced occupant moves
    to its cell on the other side. After ``move_limit`` displacements the
    item still in hand goes to the stash. ``rng`` is accepted for API
    symmetry; the walk itself is deterministic.
    """
    if item.x in table._where:
        raise UsageError(f"index {item.x} is already in the table")
    if table.capacity is not None and table.occupancy >= table.capacity:
        raise UsageError("table is at capacity")
    cur = item
    side = 0
    for _ in range(move_limit + 1):
        offset = probe_locations(table, cur)[side]
        occupant = table.slots[side][offset]
        table._set(side, offset, cur)
        if occupant is None:
            return InsertResult.PLACED
        del table._where[occupant.x]
        cur = occupant
        side ^= 1
    if stash.add(cur, table.level):
        return InsertResult.STASHED
    return InsertResult.STASH_OVERFLOW


def lookup(table, key, x=None):
    """Read both designated cells of ``key``.

    ``key`` is an index (PRF mode), an :class:`Item`, or a raw location
    pair; with a raw pair pass ``x`` to say which index to match.
    Returns ``(item or None, (off0, off1))``; both cells are always read.
    """
    if isinstance(key, tuple):
        if x is None:
            raise UsageError("lookup by location pair needs the index to match")
        offsets = key
    else:
        offsets = probe_locations(table, key)
        x = key.x if isinstance(key, Item) else key
    first = table.slots[0][offsets[0]]
    second = table.slots[1][offsets[1]]
    for cell in (first, second):
        if cell is not None and cell.live and cell.x == x:
            return cell, tuple(offsets)
    return None, tuple(offsets)


def item_locations(items, cells, seeds=None):
    """Side-0 and side-1 offsets for a list of items as int64 arrays."""
    if seeds is None:
        pairs = np.array([it.loc_pair for it in items], dtype=np.int64).reshape(-1, 2)
        return pairs[:, 0], pairs[:, 1]
    xs = np.fromiter((it.x for it in items), dtype=np.int64, count=len(items))
    return prf_locations(seeds[0], xs, cells), prf_locations(seeds[1], xs, cells)


def build(items, level, cells, seeds=None, stash_room=None, move_limit=32,
          generation=0, capacity=None):
    """Construct a table from distinct live items, inserted in ascending index order.

    Returns ``(table, spilled)``. Raises :class:`BuildFailure` when more
    than ``stash_room`` items spill; the caller retries with fresh seeds
    or fresh location pairs.
    """
    if capacity is not None and len(items) > capacity:
        raise UsageError(f"{len(items)} items exceed capacity {capacity}")
    ordered = sorted(items, key=lambda it: it.x)
    table = CuckooTable(level, cells, seeds, generation, capacity)
    if not ordered:
        return table, []
    loc0, loc1 = item_locations(ordered, cells, seeds)
    slots0, slots1, spilled_idx = _kernels.place(loc0, loc1, cells, move_limit)
    if stash_room is not None and len(spilled_idx) > stash_room:
        raise BuildFailure(len(spilled_idx), stash_room)
    for side, slots in ((0, slots0), (1, slots1)):
        for offset in np.flatnonzero(slots >= 0):
            table._set(side, int(offset), ordered[slots[offset]])
    return table, [ordered[i] for i in spilled_idx]
