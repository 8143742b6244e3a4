"""Client-side view of the server: encrypted, encoded records per cell."""

import pickle

from .cuckoo import StashEntry, empty_item
from .records import decode_entry, encode


class Vault:
    """Reads and writes :class:`StashEntry` records through a cipher.

    Table and cache cells use ``dirty=False, tag=0``; the record layout is
    the same everywhere.
    """

    def __init__(self, server, cipher):
        self.server = server
        self.cipher = cipher

    def read(self, region, offset):
        return decode_entry(self.cipher.decrypt(self.server.read_cell(region, offset)))

    def write(self, region, offset, entry):
        data = encode(entry.item, entry.dirty, entry.tag)
        self.server.write_cell(region, offset, self.cipher.encrypt(data))

    def read_all(self, region):
        return [self.read(region, i) for i in range(region.cell_count)]

    def write_all(self, region, entries):
        for i, entry in enumerate(entries):
            self.write(region, i, entry)

    def allocate(self, region):
        """Fresh region pre-filled with one shared encrypted empty cell."""
        placeholder = self.cipher.encrypt(encode(empty_item()))
        self.server.allocate(region, [placeholder] * region.cell_count)
        return region

    def release(self, region):
        self.server.release(region)

    def peek(self, region, offset):
        """Decrypt without touching the trace (test oracles only)."""
        return decode_entry(self.cipher.decrypt(self.server.peek_cell(region, offset)))

    def peek_all(self, region):
        return [self.peek(region, i) for i in range(region.cell_count)]

    def peek_raw(self, region, offset):
        return self.cipher.decrypt(self.server.peek_cell(region, offset))

    def poke(self, region, offset, entry):
        """Overwrite a cell without tracing (fault injection)."""
        data = encode(entry.item, entry.dirty, entry.tag)
        self.server.poke_cell(region, offset, self.cipher.encrypt(data))


def blank():
    return StashEntry(empty_item(), False, 0)


# shared empty marker for writes; never mutate it
EMPTY = blank()


class _PassThrough:
    name = "none"

    @staticmethod
    def encrypt(data):
        return data

    @staticmethod
    def decrypt(data):
        return data


class PlainVault:
    """Unencrypted, untraced in-memory store with the :class:`Vault` interface.

    FUNCTIONAL mode runs the protocol over this. Records are stored by
    reference, so callers must write back anything they mutate. Regions
    may be rewritten with more records than their nominal size (an
    unbounded stash).
    """

    cipher = _PassThrough()

    def __init__(self):
        self._regions = {}
        self.access_count = 0

    # the server-side half, so the same object serves as both
    def allocate(self, region, fill=None):
        self._regions[region] = [EMPTY] * region.cell_count if fill is None else list(fill)
        return region

    def release(self, region):
        self._regions.pop(region, None)

    def regions(self):
        return list(self._regions)

    def read_cell(self, region, offset):
        self.access_count += 1
        return self._regions[region][offset]

    def write_cell(self, region, offset, value):
        self.access_count += 1
        self._regions[region][offset] = value

    def drain_trace(self):
        return []

    def read(self, region, offset):
        self.access_count += 1
        return self._regions[region][offset]

    def write(self, region, offset, entry):
        self.access_count += 1
        self._regions[region][offset] = entry

    def read_all(self, region):
        cells = self._regions[region]
        self.access_count += len(cells)
        return list(cells)

    def write_all(self, region, entries):
        entries = list(entries)
        self.access_count += len(entries)
        self._regions[region] = entries

    def peek(self, region, offset):
        return self._regions[region][offset]

    def peek_all(self, region):
        return list(self._regions[region])

    def peek_raw(self, region, offset):
        return self._regions[region][offset]

    def poke(self, region, offset, entry):
        self._regions[region][offset] = entry

    def save(self, path):
        """Pickle the regions (a debugging snapshot, not the CKOR format)."""
        with open(path, "wb") as fh:
            pickle.dump((self.access_count, self._regions), fh)

    @classmethod
    def load(cls, path):
        vault = cls()
        with open(path, "rb") as fh:
            vault.access_count, vault._regions = pickle.load(fh)
        return vault
